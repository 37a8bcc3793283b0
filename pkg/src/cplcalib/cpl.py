"""Camera projection loss (CPL).

Instead of comparing predicted and true camera parameters directly, both
parameter sets are pushed through the stereo projection chain and the
resulting world points are compared.  The loss can be split into thirteen
terms, one per component of the parameter vector, by swapping a single
predicted component into an otherwise ground-truth vector.

Parameter vectors are plain ``float64`` arrays of length 13 ordered as
:data:`PARAM_NAMES`.  The last three entries are world-point heads; they do
not enter the projection and are compared directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera_model import (
    CAMERA_PARAM_NAMES,
    N_CAMERA_PARAMS,
    CameraParams,
    PixelObservation,
    image_to_camera_arrays,
    project_points,
)
from .errors import ShapeMismatch, ZeroDisparity

PARAM_NAMES = CAMERA_PARAM_NAMES + ("X", "Y", "Z")
N_PARAMS = len(PARAM_NAMES)
PARAM_INDEX = {name: i for i, name in enumerate(PARAM_NAMES)}
HEAD_SLICE = slice(N_CAMERA_PARAMS, N_PARAMS)

LOSS_MODES = ("baseline_mae", "cpl_uniform", "cpl_adaptive")

# |d| below this is treated as singular by the gradient code
GRAD_DISPARITY_GUARD = 1e-9


def as_param_vector(params: CameraParams, world_xyz=(0.0, 0.0, 0.0)) -> np.ndarray:
    return np.concatenate([params.to_array(), np.asarray(world_xyz, dtype=np.float64)])


def _check_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (N_PARAMS,):
        raise ShapeMismatch(f"expected a parameter vector of shape ({N_PARAMS},), got {w.shape}")
    return w


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pixel observations sharing one camera configuration.

    ``disparity`` is either ``None`` (every point uses the scalar ``d`` of the
    parameter vector) or an array where NaN marks points without an override.
    """

    u: np.ndarray
    v: np.ndarray
    disparity: np.ndarray | None = None

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(self.v, dtype=np.float64))
        if u.shape != v.shape or u.ndim != 1:
            raise ShapeMismatch("u and v must be 1-d arrays of equal length")
        if u.size < 1:
            raise ValueError("a correspondence set needs at least one observation")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if self.disparity is not None:
            disp = np.atleast_1d(np.asarray(self.disparity, dtype=np.float64))
            if disp.shape != u.shape:
                raise ShapeMismatch("disparity must match u and v in length")
            object.__setattr__(self, "disparity", disp)

    @property
    def n(self) -> int:
        return self.u.size

    @classmethod
    def from_observations(cls, observations) -> "CorrespondenceSet":
        obs = list(observations)
        u = [o.u for o in obs]
        v = [o.v for o in obs]
        if all(o.disparity is None for o in obs):
            return cls(u, v)
        disp = [np.nan if o.disparity is None else o.disparity for o in obs]
        return cls(u, v, disp)

    @property
    def observations(self) -> list[PixelObservation]:
        if self.disparity is None:
            return [PixelObservation(float(a), float(b)) for a, b in zip(self.u, self.v)]
        return [
            PixelObservation(float(a), float(b), None if np.isnan(c) else float(c))
            for a, b, c in zip(self.u, self.v, self.disparity)
        ]

    def without_disparity(self) -> "CorrespondenceSet":
        return CorrespondenceSet(self.u, self.v)

    def subset(self, idx) -> "CorrespondenceSet":
        disp = None if self.disparity is None else self.disparity[idx]
        return CorrespondenceSet(self.u[idx], self.v[idx], disp)

    def disparity_for(self, params) -> np.ndarray:
        """Effective per-point disparity under ``params`` (broadcasts over leading dims)."""
        d = np.asarray(params, dtype=np.float64)[..., 5:6]
        if self.disparity is None:
            return np.broadcast_to(d, d.shape[:-1] + (self.n,))
        return np.where(np.isnan(self.disparity), d, self.disparity)


def project_set(params, obs: CorrespondenceSet) -> np.ndarray:
    """World points of every observation; shape ``params.shape[:-1] + (n, 3)``."""
    p = np.asarray(params, dtype=np.float64)[..., None, :]
    return project_points(p, obs.u, obs.v, obs.disparity_for(p[..., 0, :]))


@dataclass(frozen=True)
class LossReport:
    total: float
    per_param: np.ndarray
    mode: str
    weights: np.ndarray | None = None

    def as_record(self) -> dict[str, float]:
        rec = {"total": float(self.total)}
        rec.update({f"L_{k}": float(x) for k, x in zip(PARAM_NAMES, self.per_param)})
        if self.weights is not None:
            rec.update({f"alpha_{k}": float(x) for k, x in zip(PARAM_NAMES, self.weights)})
        return rec


def cpl_loss(gt, pred, obs: CorrespondenceSet) -> float:
    """Mean per-point world-coordinate MAE plus the MAE of the world-point heads.

    The two parts carry equal (unit) weight, so a perturbation that moves only
    the projected points is not diluted by unchanged heads.
    """
    gt, pred = _check_vector(gt), _check_vector(pred)
    w_gt = project_set(gt, obs)
    w_pred = project_set(pred, obs)
    point_term = np.mean(np.abs(w_pred - w_gt))
    head_term = np.mean(np.abs(pred[HEAD_SLICE] - gt[HEAD_SLICE]))
    return float(point_term + head_term)


def hybrid_vectors(gt, pred) -> np.ndarray:
    """Row ``k`` is ``gt`` with component ``k`` replaced by ``pred[k]``."""
    gt, pred = _check_vector(gt), _check_vector(pred)
    hybrids = np.tile(gt, (N_PARAMS, 1))
    np.fill_diagonal(hybrids, pred)
    return hybrids


def decomposed_terms(gt, pred, obs: CorrespondenceSet) -> np.ndarray:
    """The 13 single-component losses ``L_k = cpl_loss(gt, hybrid_k)``."""
    gt, pred = _check_vector(gt), _check_vector(pred)
    hybrids = hybrid_vectors(gt, pred)
    # heads never move the projection, so only the camera rows need projecting
    w_gt = project_set(gt, obs)
    w_h = project_set(hybrids[:N_CAMERA_PARAMS], obs)
    terms = np.empty(N_PARAMS)
    terms[:N_CAMERA_PARAMS] = np.mean(np.abs(w_h - w_gt), axis=(1, 2))
    terms[HEAD_SLICE] = np.abs(pred[HEAD_SLICE] - gt[HEAD_SLICE]) / 3.0
    return terms


def decomposed_loss(gt, pred, obs: CorrespondenceSet, weights=None) -> LossReport:
    """Per-parameter CPL decomposition.

    Without ``weights`` the total is the plain mean of the 13 terms; with
    adaptive weights it is their weighted sum.
    """
    terms = decomposed_terms(gt, pred, obs)
    if weights is None:
        return LossReport(float(np.mean(terms)), terms, "cpl_uniform")
    weights = np.asarray(weights, dtype=np.float64)
    return LossReport(float(np.dot(weights, terms)), terms, "cpl_adaptive", weights.copy())


def baseline_loss(gt, pred) -> LossReport:
    """Plain MAE over the 13 regressed values, no camera model involved."""
    gt, pred = _check_vector(gt), _check_vector(pred)
    terms = np.abs(pred - gt)
    return LossReport(float(np.mean(terms)), terms, "baseline_mae")


# -- adaptive weighting ----------------------------------------------------


@dataclass(frozen=True)
class AdaptiveWeights:
    """Inverse-EMA loss balancing.

    Each term keeps an exponential moving average of its magnitude; weights
    are proportional to the inverse EMA and renormalised to sum to 13, so
    terms with large natural ranges are damped.

    ``active`` (optional boolean mask) marks terms that can be nonzero.  A
    term that is identically zero, such as a parameter pinned by the data
    range, would otherwise draw almost all of the weight through its zero
    EMA.  Inactive terms keep ``alpha = 1`` and the active ones share the
    remaining mass, so the sum is still 13.
    """

    ema: np.ndarray = field(default_factory=lambda: np.zeros(N_PARAMS))
    alpha: np.ndarray = field(default_factory=lambda: np.ones(N_PARAMS))
    decay: float = 0.99
    eps: float = 1e-8
    active: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if np.any(np.asarray(self.ema) < 0):
            raise ValueError("EMA values must be non-negative")

    def update(self, losses) -> "AdaptiveWeights":
        return update_adaptive_weights(self, losses, self.decay)


def _normalized_inverse(ema: np.ndarray, eps: float, active=None) -> np.ndarray:
    inv = 1.0 / (ema + eps)
    if active is None or np.all(active) or not np.any(active):
        return inv / inv.sum() * N_PARAMS
    alpha = np.ones(N_PARAMS)
    alpha[active] = inv[active] / inv[active].sum() * (N_PARAMS - np.count_nonzero(~active))
    return alpha


def update_adaptive_weights(state: AdaptiveWeights, losses, decay: float | None = None) -> AdaptiveWeights:
    """One EMA step followed by weight renormalisation.

    ``losses`` is either a :class:`LossReport` or an array of the 13 terms.
    """
    if isinstance(losses, LossReport):
        losses = losses.per_param
    losses = np.asarray(losses, dtype=np.float64)
    decay = state.decay if decay is None else decay
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must lie in (0, 1), got {decay}")
    ema = decay * state.ema + (1.0 - decay) * losses
    return AdaptiveWeights(ema, _normalized_inverse(ema, state.eps, state.active), decay, state.eps, state.active)


# -- gradients -------------------------------------------------------------


def world_point_jacobian(params, u, v, disparity=None) -> np.ndarray:
    """Analytic d(X, Y, Z)/d(fx, fy, u0, v0, b, d, theta_p, tx, ty, tz).

    Broadcasts over ``params[..., :10]``, ``u``, ``v`` and ``disparity``;
    returns shape ``batch + (3, 10)``.  When a per-point disparity is given
    the column for ``d`` is zero, since the scalar no longer enters.
    """
    p = np.asarray(params, dtype=np.float64)
    fx, fy, u0, v0, b, d, theta, tx, ty, tz = (p[..., k] for k in range(N_CAMERA_PARAMS))
    uses_d = disparity is None
    disp = d if uses_d else np.asarray(disparity, dtype=np.float64)
    if np.any(np.abs(disp) < GRAD_DISPARITY_GUARD):
        raise ZeroDisparity(f"|disparity| below {GRAD_DISPARITY_GUARD} is singular")
    x, y, z = image_to_camera_arrays(u, v, disp, fx, fy, u0, v0, b)
    x, y, z, fx, fy, u0, v0, b, disp, theta, u, v = np.broadcast_arrays(
        x, y, z, fx, fy, u0, v0, b, disp, theta, u, v
    )
    du = u - u0
    dv = v0 - v
    zero = np.zeros_like(x)

    # camera-frame partials, columns in CAMERA_PARAM_NAMES order
    dx = [b / disp, zero, zero, zero, fx / disp, -x / disp if uses_d else zero]
    dy = [zero, zero, b / disp, zero, -du / disp, (b / disp**2) * du if uses_d else zero]
    dz = [
        (b / (disp * fy)) * dv,
        -(x / fy**2) * dv,
        zero,
        x / fy,
        (fx / (disp * fy)) * dv,
        -(x / (disp * fy)) * dv if uses_d else zero,
    ]
    dx, dy, dz = (np.stack(c, axis=-1) for c in (dx, dy, dz))

    c, s = np.cos(theta), np.sin(theta)
    J = np.zeros(x.shape + (3, N_CAMERA_PARAMS))
    J[..., 0, :6] = c[..., None] * dx + s[..., None] * dz
    J[..., 1, :6] = dy
    J[..., 2, :6] = -s[..., None] * dx + c[..., None] * dz
    J[..., 0, 6] = -x * s + z * c
    J[..., 2, 6] = -x * c - z * s
    J[..., 0, 7] = 1.0
    J[..., 1, 8] = 1.0
    J[..., 2, 9] = 1.0
    return J


def grad_world_point(obs: PixelObservation, p: CameraParams) -> np.ndarray:
    """3x10 Jacobian of the projected world point of one observation."""
    return world_point_jacobian(p.to_array(), obs.u, obs.v, obs.disparity)


def set_jacobian(params, obs: CorrespondenceSet) -> np.ndarray:
    """Jacobians of every observation in the set, shape ``(n, 3, 10)``."""
    p = np.asarray(params, dtype=np.float64)
    if obs.disparity is None:
        return world_point_jacobian(p, obs.u, obs.v)
    has = ~np.isnan(obs.disparity)
    J = np.empty((obs.n, 3, N_CAMERA_PARAMS))
    if np.any(has):
        J[has] = world_point_jacobian(p, obs.u[has], obs.v[has], obs.disparity[has])
    if np.any(~has):
        J[~has] = world_point_jacobian(p, obs.u[~has], obs.v[~has])
    return J


def cpl_loss_grad(gt, pred, obs: CorrespondenceSet) -> np.ndarray:
    """(Sub)gradient of :func:`cpl_loss` with respect to ``pred``; sign(0) = 0."""
    gt, pred = _check_vector(gt), _check_vector(pred)
    resid = project_set(pred, obs) - project_set(gt, obs)
    J = set_jacobian(pred, obs)
    g = np.zeros(N_PARAMS)
    g[:N_CAMERA_PARAMS] = np.einsum("nc,ncp->p", np.sign(resid), J) / (3.0 * obs.n)
    g[HEAD_SLICE] = np.sign(pred[HEAD_SLICE] - gt[HEAD_SLICE]) / 3.0
    return g


def decomposed_terms_and_grad(gt, pred, obs: CorrespondenceSet) -> tuple[np.ndarray, np.ndarray]:
    """The 13 terms and ``dL_k/dpred_k`` for each k.

    Only hybrid ``k`` depends on ``pred[k]``, so the Jacobian of the 13 terms
    with respect to ``pred`` is diagonal; the second array is that diagonal.
    """
    gt, pred = _check_vector(gt), _check_vector(pred)
    hybrids = hybrid_vectors(gt, pred)[:N_CAMERA_PARAMS]
    w_gt = project_set(gt, obs)
    resid = project_set(hybrids, obs) - w_gt  # (10, n, 3)
    if obs.disparity is None:
        J = world_point_jacobian(hybrids[:, None, :], obs.u, obs.v)  # (10, n, 3, 10)
        Jk = J[np.arange(N_CAMERA_PARAMS), :, :, np.arange(N_CAMERA_PARAMS)]
    else:
        Jk = np.stack([set_jacobian(hybrids[k], obs)[:, :, k] for k in range(N_CAMERA_PARAMS)])
    terms = np.empty(N_PARAMS)
    grad = np.empty(N_PARAMS)
    terms[:N_CAMERA_PARAMS] = np.mean(np.abs(resid), axis=(1, 2))
    grad[:N_CAMERA_PARAMS] = np.sum(np.sign(resid) * Jk, axis=(1, 2)) / (3.0 * obs.n)
    head_diff = pred[HEAD_SLICE] - gt[HEAD_SLICE]
    terms[HEAD_SLICE] = np.abs(head_diff) / 3.0
    grad[HEAD_SLICE] = np.sign(head_diff) / 3.0
    return terms, grad


def decomposed_terms_grad(gt, pred, obs: CorrespondenceSet) -> np.ndarray:
    return decomposed_terms_and_grad(gt, pred, obs)[1]


def finite_difference_jacobian(params, u, v, disparity=None, rel_step=1e-6) -> np.ndarray:
    """Central-difference oracle for :func:`world_point_jacobian` at a single point."""
    p = np.asarray(params, dtype=np.float64)[:N_CAMERA_PARAMS]
    J = np.empty((3, N_CAMERA_PARAMS))
    for k in range(N_CAMERA_PARAMS):
        h = rel_step * max(1.0, abs(p[k]))
        hi, lo = p.copy(), p.copy()
        hi[k] += h
        lo[k] -= h
        J[:, k] = (project_points(hi, u, v, disparity) - project_points(lo, u, v, disparity)) / (2 * h)
    return J


def relative_error(a, b, floor=1.0) -> np.ndarray:
    """Elementwise ``|a - b| / max(floor, |a|, |b|)``."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
