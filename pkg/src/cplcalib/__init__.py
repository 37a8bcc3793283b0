"""Stereo camera projection, camera projection loss and parameter recovery."""
from . import camera_model, cpl, datagen, estimator, metrics
from .camera_model import CameraParams, Extrinsics, Intrinsics, PixelObservation, project_to_world
from .cpl import CorrespondenceSet, cpl_loss, decomposed_loss
from .errors import CalibrationError

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CameraParams",
    "CorrespondenceSet",
    "Extrinsics",
    "Intrinsics",
    "PixelObservation",
    "camera_model",
    "cpl",
    "cpl_loss",
    "datagen",
    "decomposed_loss",
    "estimator",
    "metrics",
    "project_to_world",
]
