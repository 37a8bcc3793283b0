"""Direct calibration: Adam on the ten camera parameters against known world points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..camera_model import CAMERA_PARAM_NAMES, N_CAMERA_PARAMS, CameraParams, WorldPoint
from ..cpl import GRAD_DISPARITY_GUARD, CorrespondenceSet, project_set, set_jacobian
from ..errors import DivergenceDetected, ShapeMismatch, ZeroDisparity
from .adam import Adam


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    early_stopping_patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # solver-only knobs; the MTL trainer ignores them
    lr_decay: float = 0.5
    plateau_epochs: int = 5
    tol: float = 1e-12

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class FitResult:
    params: CameraParams
    loss_trace: list[float] = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False


def world_mae(params, obs: CorrespondenceSet, target: np.ndarray) -> float:
    return float(np.mean(np.abs(project_set(params, obs) - target)))


def _as_target(target_world, n) -> np.ndarray:
    if len(target_world) and isinstance(target_world[0], WorldPoint):
        target = np.array([[w.X, w.Y, w.Z] for w in target_world], dtype=np.float64)
    else:
        target = np.asarray(target_world, dtype=np.float64)
    if target.shape != (n, 3):
        raise ShapeMismatch(f"target world points must have shape ({n}, 3), got {target.shape}")
    return target


def _check_disparity(p: np.ndarray, obs: CorrespondenceSet):
    if abs(p[5]) < GRAD_DISPARITY_GUARD or np.any(np.abs(obs.disparity_for(p)) < GRAD_DISPARITY_GUARD):
        raise ZeroDisparity(f"|d| fell below {GRAD_DISPARITY_GUARD} (d = {p[5]!r})")


def _whitening_basis(J: np.ndarray, free: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Map from whitened coordinates to parameter offsets.

    Columns span the free parameters; a unit step along any of them moves the
    stacked world points by one unit RMS at the initial estimate.  Directions
    the data cannot see (e.g. ``d`` under per-point disparities) are dropped.
    """
    A = J.reshape(-1, J.shape[-1])[:, free] / math.sqrt(J.shape[0])
    _, sv, vt = np.linalg.svd(A, full_matrices=False)
    keep = sv > rcond * sv[0] if sv.size and sv[0] > 0 else np.zeros(sv.size, bool)
    basis = np.zeros((J.shape[-1], int(keep.sum())))
    basis[free] = vt[keep].T / sv[keep]
    return basis


def fit_parameters(
    obs: CorrespondenceSet | list,
    target_world,
    init: CameraParams,
    cfg: SolverConfig = SolverConfig(),
    fix=(),
) -> FitResult:
    """Minimise mean world-point MAE over the free camera parameters.

    Adam runs in whitened coordinates built from the Jacobian at ``init``
    (see :func:`_whitening_basis`), which removes the strong coupling between
    pitch and translation.  ``cfg.learning_rate`` is relative: each epoch uses
    ``learning_rate * current_loss`` as the Adam step, further multiplied by
    ``cfg.lr_decay`` every ``cfg.plateau_epochs`` epochs without a new best.
    ``fix`` names parameters held at their initial value.

    The run is *converged* once the loss reaches ``cfg.tol`` or the best loss
    improves by less than 1e-10 for ``cfg.early_stopping_patience`` epochs.
    The returned parameters are the best iterate seen.
    """
    if not isinstance(obs, CorrespondenceSet):
        obs = CorrespondenceSet.from_observations(obs)
    target = _as_target(target_world, obs.n)
    unknown = set(fix) - set(CAMERA_PARAM_NAMES)
    if unknown:
        raise ValueError(f"cannot fix unknown parameters {sorted(unknown)}")
    free = np.array([k not in fix for k in CAMERA_PARAM_NAMES])
    if obs.n < free.sum():
        raise ValueError(f"{obs.n} observations cannot constrain {free.sum()} free parameters")

    p0 = init.to_array()
    _check_disparity(p0, obs)
    basis = _whitening_basis(set_jacobian(p0, obs), free)
    q = np.zeros(basis.shape[1])  # p = p0 + basis @ q
    opt = Adam([q], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)

    def current():
        return p0 + basis @ q

    loss = world_mae(current(), obs, target)
    trace, best, best_p = [], loss, current().copy()
    stall = plateau = 0
    decay = 1.0
    converged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if loss <= cfg.tol:
            trace.append(loss)
            converged = True
            break
        opt.lr = cfg.learning_rate * decay * loss
        for idx in np.array_split(rng.permutation(obs.n), max(1, math.ceil(obs.n / cfg.batch_size))):
            p = current()
            sub = obs.subset(idx)
            resid = project_set(p, sub) - target[idx]
            J = set_jacobian(p, sub)
            g = np.einsum("nc,ncp->p", np.sign(resid), J) / (3.0 * idx.size)
            opt.step([basis.T @ g])
            _check_disparity(current(), obs)
        loss = world_mae(current(), obs, target)
        if not math.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} at epoch {epoch}")
        trace.append(loss)
        if best - loss < 1e-10:
            stall += 1
            plateau += 1
        else:
            stall = plateau = 0
        if loss < best:
            best, best_p = loss, current().copy()
        if plateau >= cfg.plateau_epochs:
            decay *= cfg.lr_decay
            plateau = 0
        if best <= cfg.tol or stall >= cfg.early_stopping_patience:
            converged = True
            break
    return FitResult(CameraParams.from_array(best_p), trace, epoch, converged)
