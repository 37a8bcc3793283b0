"""Stereo pinhole camera model with a pitch-only camera-to-world pose.

Frames
------
Image:  pixel coordinates ``(u, v)`` plus a disparity between the two views.
Camera: ``x_cam`` is the depth axis, ``y_cam`` is lateral, ``z_cam`` is vertical.
World:  camera frame rotated about its lateral axis by ``theta_p`` and shifted
        by ``(tx, ty, tz)``.

Forward chain used throughout the package::

    x_cam = fx * b / d
    y_cam = -(x_cam / fx) * (u - u0)
    z_cam = (x_cam / fy) * (v0 - v)

    X =  x_cam * cos(theta_p) + z_cam * sin(theta_p) + tx
    Y =  y_cam + ty
    Z = -x_cam * sin(theta_p) + z_cam * cos(theta_p) + tz

Every transform has an array form (``*_arrays``) that broadcasts over numpy
inputs, and a thin dataclass form used at API boundaries.  The dataclass form
always routes through the array form so both paths agree bit for bit.

Angles are radians here.  Degrees only appear at file and CLI boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegeneratePoint, NonFinite, ZeroDisparity

CAMERA_PARAM_NAMES = ("fx", "fy", "u0", "v0", "b", "d", "theta_p", "tx", "ty", "tz")
N_CAMERA_PARAMS = len(CAMERA_PARAM_NAMES)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.u0, self.v0)
        if not all(math.isfinite(x) for x in vals):
            raise NonFinite(f"non-finite intrinsics {vals}")
        if self.fx == 0 or self.fy == 0:
            raise ValueError("focal lengths must be nonzero")


@dataclass(frozen=True)
class Extrinsics:
    b: float
    theta_p: float  # radians
    tx: float
    ty: float
    tz: float

    def __post_init__(self):
        vals = (self.b, self.theta_p, self.tx, self.ty, self.tz)
        if not all(math.isfinite(x) for x in vals):
            raise NonFinite(f"non-finite extrinsics {vals}")
        if not -math.pi < self.theta_p <= math.pi:
            raise ValueError(f"theta_p={self.theta_p} outside (-pi, pi]")


@dataclass(frozen=True)
class CameraParams:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    d: float

    def to_array(self) -> np.ndarray:
        i, e = self.intrinsics, self.extrinsics
        return np.array(
            [i.fx, i.fy, i.u0, i.v0, e.b, self.d, e.theta_p, e.tx, e.ty, e.tz],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a) -> "CameraParams":
        a = [float(x) for x in np.asarray(a, dtype=np.float64).reshape(-1)[:N_CAMERA_PARAMS]]
        fx, fy, u0, v0, b, d, theta, tx, ty, tz = a
        return cls(Intrinsics(fx, fy, u0, v0), Extrinsics(b, theta, tx, ty, tz), d)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(CAMERA_PARAM_NAMES, self.to_array().tolist()))

    @classmethod
    def from_dict(cls, values: dict) -> "CameraParams":
        return cls.from_array([values[k] for k in CAMERA_PARAM_NAMES])

    def with_values(self, **kw) -> "CameraParams":
        vals = self.as_dict()
        vals.update(kw)
        return CameraParams.from_dict(vals)


@dataclass(frozen=True)
class PixelObservation:
    u: float
    v: float
    disparity: float | None = None  # overrides CameraParams.d when set

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise NonFinite(f"non-finite pixel ({self.u}, {self.v})")

    def without_disparity(self) -> "PixelObservation":
        return replace(self, disparity=None)


@dataclass(frozen=True)
class CameraPoint:
    x_cam: float
    y_cam: float
    z_cam: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_cam, self.y_cam, self.z_cam])


@dataclass(frozen=True)
class WorldPoint:
    X: float
    Y: float
    Z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z])


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite("projection produced a non-finite coordinate")


# -- array forms -----------------------------------------------------------


def image_to_camera_arrays(u, v, disparity, fx, fy, u0, v0, b):
    """Stereo back-projection of pixels into the camera frame.

    All arguments broadcast against each other.  Returns ``(x_cam, y_cam, z_cam)``.
    """
    disparity = np.asarray(disparity, dtype=np.float64)
    if np.any(disparity == 0):
        raise ZeroDisparity("disparity of exactly zero puts the point at infinity")
    with np.errstate(over="ignore", invalid="ignore"):
        x = fx * b / disparity
        y = -(x / fx) * (u - u0)
        z = (x / fy) * (v0 - v)
    _check_finite(x, y, z)
    return x, y, z


def camera_to_world_arrays(x, y, z, theta_p, tx, ty, tz):
    c, s = np.cos(theta_p), np.sin(theta_p)
    X = x * c + z * s + tx
    Y = y + ty
    Z = -x * s + z * c + tz
    _check_finite(X, Y, Z)
    return X, Y, Z


def world_to_camera_arrays(X, Y, Z, theta_p, tx, ty, tz):
    c, s = np.cos(theta_p), np.sin(theta_p)
    dx, dz = X - tx, Z - tz
    x = dx * c - dz * s
    y = Y - ty
    z = dx * s + dz * c
    _check_finite(x, y, z)
    return x, y, z


def camera_to_image_arrays(x, y, z, fx, fy, u0, v0, b):
    """Inverse of :func:`image_to_camera_arrays`; returns ``(u, v, disparity)``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x == 0):
        raise DegeneratePoint("x_cam = 0 has no pixel projection")
    with np.errstate(over="ignore", invalid="ignore"):
        disparity = fx * b / x
        u = u0 - fx * y / x
        v = v0 - fy * z / x
    _check_finite(u, v, disparity)
    return u, v, disparity


def normalized_image_to_camera_arrays(u, v, fx, fy, u0, v0):
    """Monocular, depth-free ray: ``x_cam = 1``, lateral terms scaled by focal length.

    Note the lateral sign is the opposite of the stereo chain's ``y_cam``.
    """
    y = (u - u0) / fx
    z = (v - v0) / fy
    x = np.ones(np.broadcast(y, z).shape)
    _check_finite(y, z)
    return x, y, z


def project_points(params, u, v, disparity=None) -> np.ndarray:
    """Project pixels to world points for one or many parameter vectors.

    ``params`` has trailing dimension >= 10 in :data:`CAMERA_PARAM_NAMES`
    order (extra trailing entries such as world-point heads are ignored).
    ``disparity=None`` uses the scalar ``d`` of each parameter vector.
    Returns an array of shape ``broadcast(params[..., 0], u, v) + (3,)``.
    """
    p = np.asarray(params, dtype=np.float64)
    fx, fy, u0, v0, b, d, theta, tx, ty, tz = (p[..., k] for k in range(N_CAMERA_PARAMS))
    disp = d if disparity is None else disparity
    x, y, z = image_to_camera_arrays(u, v, disp, fx, fy, u0, v0, b)
    X, Y, Z = camera_to_world_arrays(x, y, z, theta, tx, ty, tz)
    return np.stack(np.broadcast_arrays(X, Y, Z), axis=-1)


def pitch_matrix(theta_p: float) -> np.ndarray:
    """Camera-to-world rotation as an explicit 3x3 matrix."""
    c, s = math.cos(theta_p), math.sin(theta_p)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# -- dataclass forms -------------------------------------------------------


def effective_disparity(obs: PixelObservation, p: CameraParams) -> float:
    return p.d if obs.disparity is None else obs.disparity


def image_to_camera(obs: PixelObservation, p: CameraParams) -> CameraPoint:
    i = p.intrinsics
    x, y, z = image_to_camera_arrays(
        obs.u, obs.v, effective_disparity(obs, p), i.fx, i.fy, i.u0, i.v0, p.extrinsics.b
    )
    return CameraPoint(float(x), float(y), float(z))


def camera_to_world(c: CameraPoint, e: Extrinsics) -> WorldPoint:
    X, Y, Z = camera_to_world_arrays(c.x_cam, c.y_cam, c.z_cam, e.theta_p, e.tx, e.ty, e.tz)
    return WorldPoint(float(X), float(Y), float(Z))


def project_to_world(obs: PixelObservation, p: CameraParams) -> WorldPoint:
    return camera_to_world(image_to_camera(obs, p), p.extrinsics)


def world_to_camera(w: WorldPoint, e: Extrinsics) -> CameraPoint:
    x, y, z = world_to_camera_arrays(w.X, w.Y, w.Z, e.theta_p, e.tx, e.ty, e.tz)
    return CameraPoint(float(x), float(y), float(z))


def camera_to_image(c: CameraPoint, intr: Intrinsics, b: float) -> PixelObservation:
    u, v, disp = camera_to_image_arrays(
        c.x_cam, c.y_cam, c.z_cam, intr.fx, intr.fy, intr.u0, intr.v0, b
    )
    return PixelObservation(float(u), float(v), float(disp))


def normalized_image_to_camera(obs: PixelObservation, intr: Intrinsics) -> CameraPoint:
    x, y, z = normalized_image_to_camera_arrays(obs.u, obs.v, intr.fx, intr.fy, intr.u0, intr.v0)
    return CameraPoint(float(x), float(y), float(z))
