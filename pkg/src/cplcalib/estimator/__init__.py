"""Parameter recovery: a direct solver and a small multi-task regressor."""
from .adam import Adam
from .checkpoint import epoch_log, load_checkpoint, save_checkpoint
from .evaluate import average_predictor, evaluate, perfect_predictor, predict, solver_predictor
from .mtl import (
    TOPOLOGIES,
    MtlNet,
    TrainHistory,
    TrainSample,
    mtl_forward,
    mtl_train,
    net_for_records,
    observation_features,
    samples_from_records,
)
from .solver import FitResult, SolverConfig, fit_parameters

__all__ = [
    "Adam",
    "FitResult",
    "MtlNet",
    "SolverConfig",
    "TOPOLOGIES",
    "TrainHistory",
    "TrainSample",
    "average_predictor",
    "epoch_log",
    "evaluate",
    "fit_parameters",
    "load_checkpoint",
    "mtl_forward",
    "mtl_train",
    "net_for_records",
    "observation_features",
    "perfect_predictor",
    "predict",
    "samples_from_records",
    "save_checkpoint",
    "solver_predictor",
]
