"""Evaluation of parameter predictors on held-out records, plus reference predictors."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..metrics import HFOV_THRESHOLDS, EvalTable, evaluation_table, hfov
from .mtl import MtlNet, mtl_forward, observation_features
from .solver import SolverConfig, fit_parameters

Predictor = Callable[[object], np.ndarray]


def predict(model, records) -> np.ndarray:
    """Stack predictions as ``(n, >=10)``.

    ``model`` may be an :class:`MtlNet`, a callable taking one record, or an
    array of precomputed predictions.
    """
    if isinstance(model, MtlNet):
        feats = np.array([observation_features(r.observations, r.params) for r in records])
        return mtl_forward(model, feats).reshape(len(records), -1)
    if callable(model):
        return np.array([np.asarray(model(r), dtype=np.float64) for r in records])
    return np.asarray(model, dtype=np.float64)


def evaluate(model, test, width, signed: bool = False, thresholds=HFOV_THRESHOLDS) -> EvalTable:
    if len(test) == 0:
        raise ValueError("empty test set")
    gt = np.array([r.params for r in test])
    pred = predict(model, test)
    return evaluation_table(gt, pred[:, : gt.shape[1]], width, signed=signed, thresholds=thresholds)


def perfect_predictor(record) -> np.ndarray:
    return record.params.copy()


def average_predictor(train, width) -> Predictor:
    """Predict training-set averages regardless of the query.

    Focal lengths come from the mean horizontal field of view (converted back
    through ``width``); every other component is the plain mean.
    """
    gts = np.array([r.params for r in train])
    const = gts.mean(axis=0)
    fov = math.radians(float(np.mean(hfov(gts[:, 0], width))))
    f = width / (2.0 * math.tan(fov / 2.0))
    const[0] = const[1] = f

    def _predict(record):
        return const.copy()

    return _predict


def solver_predictor(init, cfg: SolverConfig = SolverConfig(), fix=()) -> Predictor:
    """Calibrate each record directly from its observations and world points.

    ``init`` is a :class:`CameraParams` or a callable mapping a record to one.
    """

    def _predict(record):
        p0 = init(record) if callable(init) else init
        res = fit_parameters(record.observations, record.world, p0, cfg, fix=fix)
        out = record.params.copy()
        out[:10] = res.params.to_array()
        return out

    return _predict

