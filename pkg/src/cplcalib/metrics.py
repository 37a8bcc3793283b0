"""Evaluation metrics: normalised MAE per parameter and horizontal-FOV accuracy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera_model import CAMERA_PARAM_NAMES
from .errors import NonPositiveInput, ShapeMismatch, ZeroDenominator

# column order of the published result tables
TABLE_COLUMNS = ("fx", "fy", "u0", "v0", "b", "d", "tx", "ty", "tz", "theta_p")
HFOV_THRESHOLDS = (0, 1, 2, 3, 4, 5)


def _paired(targets, preds) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    yhat = np.asarray(preds, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ShapeMismatch(f"targets {y.shape} and predictions {yhat.shape} differ")
    if y.size == 0:
        raise ValueError("need at least one sample")
    return y, yhat


def nmae(targets, preds, signed: bool = False) -> float:
    """MAE divided by the mean absolute target.

    With ``signed=True`` the numerator is the mean signed error
    ``mean(pred - target)`` instead, which can go negative.
    """
    y, yhat = _paired(targets, preds)
    denom = np.mean(np.abs(y))
    if denom == 0:
        raise ZeroDenominator("mean absolute target is zero")
    err = yhat - y
    num = np.mean(err) if signed else np.mean(np.abs(err))
    return float(num / denom)


def hfov(f, w):
    """Horizontal field of view in degrees, ``2 * atan(w / 2f)``.  Broadcasts."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if np.any(f <= 0) or np.any(w <= 0):
        raise NonPositiveInput("focal length and image width must be positive")
    out = np.degrees(2.0 * np.arctan(w / (2.0 * f)))
    return float(out) if out.ndim == 0 else out


def hfov_accuracy(gt_f, pred_f, w, thresholds=HFOV_THRESHOLDS) -> list[float]:
    """Fraction of samples whose hFOV error is at most each threshold (degrees).

    Threshold 0 therefore counts exact hFOV agreement only.
    """
    gt, pred = _paired(gt_f, pred_f)
    err = np.abs(np.asarray(hfov(pred, w)) - np.asarray(hfov(gt, w)))
    acc = [float(np.mean(err <= t)) for t in thresholds]
    ordered = sorted(range(len(thresholds)), key=lambda i: thresholds[i])
    if any(acc[a] > acc[b] for a, b in zip(ordered, ordered[1:])):
        raise AssertionError("hFOV accuracy must be non-decreasing in threshold")
    return acc


@dataclass(frozen=True)
class EvalTable:
    nmae: dict[str, float]
    hfov_accuracy: tuple[float, ...]
    sample_count: int
    thresholds: tuple[int, ...] = HFOV_THRESHOLDS

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if any(not 0.0 <= a <= 1.0 for a in self.hfov_accuracy):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_delimited(self, sep: str = ",") -> str:
        lines = [
            sep.join(TABLE_COLUMNS),
            sep.join(_fmt(self.nmae[k]) for k in TABLE_COLUMNS),
            sep.join(f"hfov_{t}" for t in self.thresholds),
            sep.join(_fmt(a) for a in self.hfov_accuracy),
        ]
        return "\n".join(lines) + "\n"

    def to_record(self) -> str:
        lines = [f"sample_count={self.sample_count}"]
        lines += [f"nmae_{k}={_fmt(self.nmae[k])}" for k in TABLE_COLUMNS]
        lines += [f"hfov_acc_{t}={_fmt(a)}" for t, a in zip(self.thresholds, self.hfov_accuracy)]
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return format(x, ".17g")


def evaluation_table(gt, pred, width, signed: bool = False, thresholds=HFOV_THRESHOLDS) -> EvalTable:
    """Build an :class:`EvalTable` from stacked parameter vectors.

    ``gt`` and ``pred`` have shape ``(n, >=10)`` in camera-parameter order
    (fx, fy, u0, v0, b, d, theta_p, tx, ty, tz, ...).
    """
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"gt {gt.shape} vs pred {pred.shape}")
    idx = {k: i for i, k in enumerate(CAMERA_PARAM_NAMES)}
    scores = {}
    for k in TABLE_COLUMNS:
        try:
            scores[k] = nmae(gt[:, idx[k]], pred[:, idx[k]], signed=signed)
        except ZeroDenominator:
            scores[k] = math.nan
    acc = hfov_accuracy(gt[:, 0], pred[:, 0], width, thresholds)
    return EvalTable(scores, tuple(acc), gt.shape[0], tuple(thresholds))
