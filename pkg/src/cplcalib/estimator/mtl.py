"""Small multi-task regressor: shared tanh trunk, 13 scalar heads, manual backprop.

This is a desk-scale stand-in for an image CNN.  Inputs are flat feature
vectors built from correspondences (see :func:`observation_features`); outputs
are the 13 parameter-vector components.

Two trunk topologies are supported:

* ``"sn"`` - one trunk over the whole feature vector.
* ``"mn"`` - two trunks over disjoint feature groups, outputs concatenated
  before the heads.

Heads predict in normalised units and are mapped to physical units by a
fixed affine transform, ``out = offset + scale * raw``.  With zero head
weights and zero raw bias every head therefore outputs ``offset``, the
mid-range of its parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cpl import (
    HEAD_SLICE,
    LOSS_MODES,
    N_PARAMS,
    AdaptiveWeights,
    CorrespondenceSet,
    LossReport,
    decomposed_terms_and_grad,
)
from ..errors import DivergenceDetected, ShapeMismatch
from .adam import Adam
from .solver import SolverConfig

TOPOLOGIES = ("sn", "mn")


def observation_features(obs: CorrespondenceSet, params=None) -> np.ndarray:
    """Flattened ``(u, v, disparity)`` triples.

    ``params`` supplies the scalar ``d`` for observations without their own
    disparity.
    """
    if obs.disparity is None or np.any(np.isnan(obs.disparity)):
        if params is None:
            raise ValueError("observations lack disparities; pass params to fill them")
        disp = obs.disparity_for(params)
    else:
        disp = obs.disparity
    return np.column_stack([obs.u, obs.v, disp]).reshape(-1)


def branch_indices(in_dim: int, topology: str) -> list[np.ndarray]:
    """Feature columns seen by each trunk.

    For ``"mn"`` the pixel coordinates go to one trunk and the disparities
    to the other, matching the ``(u, v, d)`` triple layout.
    """
    idx = np.arange(in_dim)
    if topology == "sn":
        return [idx]
    if topology == "mn":
        if in_dim % 3:
            raise ShapeMismatch("mn topology expects (u, v, d) triples")
        return [idx[idx % 3 != 2], idx[idx % 3 == 2]]
    raise ValueError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


@dataclass
class MtlNet:
    trunks: list[list[tuple[np.ndarray, np.ndarray]]]
    branches: list[np.ndarray]
    head_W: np.ndarray
    head_b: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    loss_mode: str = "cpl_uniform"
    topology: str = "sn"

    @classmethod
    def create(
        cls,
        in_dim: int,
        hidden=(64, 64),
        topology: str = "sn",
        loss_mode: str = "cpl_uniform",
        seed: int = 0,
        out_offset=None,
        out_scale=None,
        in_mean=None,
        in_std=None,
    ) -> "MtlNet":
        if loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {loss_mode!r}; expected one of {LOSS_MODES}")
        rng = np.random.default_rng(seed)
        branches = branch_indices(in_dim, topology)
        trunks = []
        for br in branches:
            layers, fan_in = [], br.size
            for width in hidden:
                lim = math.sqrt(6.0 / (fan_in + width))
                layers.append((rng.uniform(-lim, lim, (width, fan_in)), np.zeros(width)))
                fan_in = width
            trunks.append(layers)
        h_dim = sum(t[-1][0].shape[0] if t else br.size for t, br in zip(trunks, branches))
        return cls(
            trunks=trunks,
            branches=branches,
            head_W=np.zeros((N_PARAMS, h_dim)),
            head_b=np.zeros(N_PARAMS),
            out_offset=np.zeros(N_PARAMS) if out_offset is None else np.asarray(out_offset, float).copy(),
            out_scale=np.ones(N_PARAMS) if out_scale is None else np.asarray(out_scale, float).copy(),
            in_mean=np.zeros(in_dim) if in_mean is None else np.asarray(in_mean, float).copy(),
            in_std=np.ones(in_dim) if in_std is None else np.asarray(in_std, float).copy(),
            loss_mode=loss_mode,
            topology=topology,
        )

    @property
    def in_dim(self) -> int:
        return self.in_mean.size

    @property
    def head_bias_values(self) -> np.ndarray:
        """Head biases expressed in output units."""
        return self.out_offset + self.out_scale * self.head_b

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays, in a fixed order shared by gradients and checkpoints."""
        out = []
        for layers in self.trunks:
            for W, b in layers:
                out += [W, b]
        return out + [self.head_W, self.head_b]

    def parameter_names(self) -> list[str]:
        names = []
        for t, layers in enumerate(self.trunks):
            for i in range(len(layers)):
                names += [f"trunk{t}.W{i}", f"trunk{t}.b{i}"]
        return names + ["head.W", "head.b"]

    def forward(self, X, cache: bool = False):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected {self.in_dim} features, got {X.shape[1]}")
        xn = (X - self.in_mean) / self.in_std
        acts = []
        outs = []
        for br, layers in zip(self.branches, self.trunks):
            a = xn[:, br]
            seq = [a]
            for W, b in layers:
                a = np.tanh(a @ W.T + b)
                seq.append(a)
            acts.append(seq)
            outs.append(a)
        h = np.concatenate(outs, axis=1)
        y = self.out_offset + self.out_scale * (h @ self.head_W.T + self.head_b)
        return (y, (acts, h)) if cache else y

    def backward(self, grad_out, cached) -> list[np.ndarray]:
        """Gradients of a scalar loss given ``dloss/doutput``; order matches :meth:`parameters`."""
        acts, h = cached
        g_raw = np.asarray(grad_out) * self.out_scale
        g_head_W = g_raw.T @ h
        g_head_b = g_raw.sum(axis=0)
        g_h = g_raw @ self.head_W
        grads = []
        col = 0
        for seq, layers in zip(acts, self.trunks):
            width = seq[-1].shape[1]
            g_a = g_h[:, col : col + width]
            col += width
            branch = []
            for i in range(len(layers) - 1, -1, -1):
                W, _ = layers[i]
                g_z = g_a * (1.0 - seq[i + 1] ** 2)
                branch.append((g_z.T @ seq[i], g_z.sum(axis=0)))
                g_a = g_z @ W
            for gW, gb in reversed(branch):
                grads += [gW, gb]
        return grads + [g_head_W, g_head_b]

    def copy(self) -> "MtlNet":
        return MtlNet(
            [[(W.copy(), b.copy()) for W, b in layers] for layers in self.trunks],
            [br.copy() for br in self.branches],
            self.head_W.copy(),
            self.head_b.copy(),
            self.out_offset.copy(),
            self.out_scale.copy(),
            self.in_mean.copy(),
            self.in_std.copy(),
            self.loss_mode,
            self.topology,
        )


def mtl_forward(net: MtlNet, features) -> np.ndarray:
    """Predicted 13-vector for one feature vector (or a batch, row-wise)."""
    features = np.asarray(features, dtype=np.float64)
    y = net.forward(features)
    return y[0] if features.ndim == 1 else y


@dataclass(frozen=True)
class TrainSample:
    features: np.ndarray
    gt: np.ndarray
    obs: CorrespondenceSet


def samples_from_records(records) -> list[TrainSample]:
    return [TrainSample(observation_features(r.observations, r.params), r.params, r.observations) for r in records]


def net_for_records(records, ranges, hidden=(64, 64), topology="sn", loss_mode="cpl_uniform", seed=0) -> MtlNet:
    """Build a net whose input normalisation and output mapping fit ``records``.

    Camera heads map onto the preset's ``[min, max]`` (mid-range offset,
    half-width scale); world heads use the span of the training targets.
    A camera parameter pinned by ``ranges`` gets zero scale, so its head
    always outputs the pinned value.  Degenerate world-head spans fall back
    to a unit scale.
    """
    feats = np.array([observation_features(r.observations, r.params) for r in records])
    gts = np.array([r.params for r in records])
    offset = np.empty(N_PARAMS)
    scale = np.empty(N_PARAMS)
    offset[:10] = ranges.midpoint()
    scale[:10] = ranges.half_width()
    lo, hi = gts[:, HEAD_SLICE].min(axis=0), gts[:, HEAD_SLICE].max(axis=0)
    offset[HEAD_SLICE] = (lo + hi) / 2.0
    scale[HEAD_SLICE] = (hi - lo) / 2.0
    scale[HEAD_SLICE][scale[HEAD_SLICE] <= 0] = 1.0
    std = feats.std(axis=0)
    std[std <= 0] = 1.0
    return MtlNet.create(
        feats.shape[1], hidden, topology, loss_mode, seed, offset, scale, feats.mean(axis=0), std
    )


def batch_terms(net: MtlNet, batch: list[TrainSample]):
    """Per-sample loss terms ``(B, 13)``, their derivatives, and the forward cache.

    In the CPL modes observations are projected with the regressed scalar
    ``d`` (per-point disparities are dropped), so every head receives signal.
    """
    X = np.array([s.features for s in batch])
    Y, cache = net.forward(X, cache=True)
    terms = np.empty((len(batch), N_PARAMS))
    dterms = np.empty_like(terms)
    for i, s in enumerate(batch):
        if net.loss_mode == "baseline_mae":
            diff = Y[i] - s.gt
            terms[i], dterms[i] = np.abs(diff), np.sign(diff)
        else:
            terms[i], dterms[i] = decomposed_terms_and_grad(s.gt, Y[i], s.obs.without_disparity())
    return terms, dterms, cache


def combine_terms(terms, dterms, weights=None):
    """Batch-mean loss and ``dloss/doutputs``; ``weights=None`` means a plain mean of the 13 terms."""
    w = np.full(N_PARAMS, 1.0 / N_PARAMS) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float(np.mean(terms @ w))
    return loss, dterms * w / terms.shape[0]


def batch_loss_and_grad(net: MtlNet, batch: list[TrainSample], weights=None):
    terms, dterms, cache = batch_terms(net, batch)
    loss, grad_out = combine_terms(terms, dterms, weights if net.loss_mode == "cpl_adaptive" else None)
    return loss, grad_out, cache


@dataclass
class TrainHistory:
    reports: list[LossReport] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False

    @property
    def totals(self) -> list[float]:
        return [r.total for r in self.reports]


def mtl_train(
    net: MtlNet,
    data: list[TrainSample],
    cfg: SolverConfig = SolverConfig(),
    ema_decay: float = 0.99,
    reduce_on_plateau: bool = False,
) -> tuple[MtlNet, TrainHistory]:
    """Minibatch Adam training; returns the trained copy and per-epoch reports.

    Each report averages the batch losses of its epoch (measured before each
    batch's update).  In ``cpl_adaptive`` mode the weights are refreshed from
    every batch before that batch's gradient is formed, and the report holds
    the weights at the end of the epoch.  Training stops early once the epoch
    loss has not improved for ``cfg.early_stopping_patience`` epochs.

    With ``reduce_on_plateau`` the learning rate is multiplied by
    ``cfg.lr_decay`` whenever ``cfg.plateau_epochs`` epochs pass without a new
    best; off by default so the plain fixed-rate schedule is the reference.
    """
    if not data:
        raise ValueError("no training data")
    widths = {s.features.size for s in data}
    if widths != {net.in_dim}:
        raise ShapeMismatch(f"feature widths {sorted(widths)} do not match net input {net.in_dim}")
    net = net.copy()
    params = net.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    # heads with zero output scale are pinned and their terms stay at zero
    state = AdaptiveWeights(decay=ema_decay, active=net.out_scale != 0)
    history = TrainHistory()
    best, since_best, plateau = math.inf, 0, 0
    n_batches = max(1, math.ceil(len(data) / cfg.batch_size))
    for epoch in range(1, cfg.max_epochs + 1):
        tot, per = 0.0, np.zeros(N_PARAMS)
        for idx in np.array_split(rng.permutation(len(data)), n_batches):
            batch = [data[i] for i in idx]
            terms, dterms, cache = batch_terms(net, batch)
            weights = None
            if net.loss_mode == "cpl_adaptive":
                state = state.update(terms.mean(axis=0))
                weights = state.alpha
            loss, grad_out = combine_terms(terms, dterms, weights)
            if not math.isfinite(loss):
                raise DivergenceDetected(f"training loss became {loss} at epoch {epoch}")
            opt.step(net.backward(grad_out, cache))
            terms = terms.mean(axis=0)
            tot += loss * len(idx)
            per += terms * len(idx)
        tot /= len(data)
        per /= len(data)
        w = state.alpha.copy() if net.loss_mode == "cpl_adaptive" else None
        history.reports.append(LossReport(tot, per, net.loss_mode, w))
        history.epochs_run = epoch
        if tot < best:
            best, since_best, plateau = tot, 0, 0
        else:
            since_best += 1
            plateau += 1
            if reduce_on_plateau and plateau >= cfg.plateau_epochs:
                opt.lr *= cfg.lr_decay
                plateau = 0
            if since_best >= cfg.early_stopping_patience:
                history.stopped_early = True
                break
    return net, history
