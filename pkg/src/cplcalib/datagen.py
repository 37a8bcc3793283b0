"""Synthetic camera configurations and correspondence datasets.

Parameter bounds for the three presets are transcribed from published
dataset statistics (min/max per parameter, pitch in degrees).  Sampling is
uniform inside the bounds; only the bounds are honoured, not the means.

Dataset files are comma-separated UTF-8 text, one record per line after a
header.  Floats are written with 17 significant digits so a parse of a
serialised record reproduces it exactly.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .camera_model import (
    CAMERA_PARAM_NAMES,
    CameraParams,
    camera_to_image_arrays,
    project_points,
    world_to_camera_arrays,
)
from .cpl import N_PARAMS, CorrespondenceSet
from .errors import DatasetFormatError, EmptyRangeAfterGuard

DEFAULT_D_GUARD = 0.1


@dataclass(frozen=True)
class ParamRanges:
    """Closed ``[min, max]`` bounds per camera parameter; ``theta_p`` in degrees.

    ``tie_fy_to_fx`` makes every sample use ``fy = fx``.
    """

    bounds: dict[str, tuple[float, float]]
    tie_fy_to_fx: bool = False
    name: str = "custom"

    def __post_init__(self):
        missing = set(CAMERA_PARAM_NAMES) - set(self.bounds)
        if missing:
            raise ValueError(f"ranges missing parameters: {sorted(missing)}")
        for k in CAMERA_PARAM_NAMES:
            lo, hi = self.bounds[k]
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid range for {k}: [{lo}, {hi}]")

    def is_fixed(self, name: str) -> bool:
        lo, hi = self.bounds[name]
        return lo == hi

    def contains(self, params: CameraParams, tol: float = 0.0) -> bool:
        vals = params.as_dict()
        vals["theta_p"] = math.degrees(vals["theta_p"])
        return all(
            self.bounds[k][0] - tol <= vals[k] <= self.bounds[k][1] + tol for k in CAMERA_PARAM_NAMES
        )

    @property
    def image_size(self) -> tuple[float, float]:
        """Image rectangle implied by a centred principal point (upper bounds)."""
        return 2.0 * self.bounds["u0"][1], 2.0 * self.bounds["v0"][1]

    def midpoint(self) -> np.ndarray:
        mid = np.array([(lo + hi) / 2.0 for lo, hi in (self.bounds[k] for k in CAMERA_PARAM_NAMES)])
        mid[6] = math.radians(mid[6])
        return mid

    def half_width(self) -> np.ndarray:
        hw = np.array([(hi - lo) / 2.0 for lo, hi in (self.bounds[k] for k in CAMERA_PARAM_NAMES)])
        hw[6] = math.radians(hw[6])
        return hw


def _fixed(x):
    return (x, x)


PRESETS: dict[str, ParamRanges] = {
    "cvgl": ParamRanges(
        {
            "fx": (15.005, 120.092),
            "fy": (15.005, 120.092),
            "u0": _fixed(56.0),
            "v0": _fixed(56.0),
            "b": (-168.0, 0.0),
            "d": (-16.0, 14.531),
            "theta_p": (-45.0, 15.0),
            "tx": (-168.0, 0.0),
            "ty": (-5.0, 5.0),
            "tz": (-1.6, 0.4),
        },
        tie_fy_to_fx=True,
        name="cvgl",
    ),
    "tsinghua": ParamRanges(
        {
            "fx": _fixed(2282.864),
            "fy": _fixed(2281.794),
            "u0": _fixed(1042.041),
            "v0": _fixed(529.888),
            "b": _fixed(0.208),
            "d": (-6.753, 83.093),
            "theta_p": _fixed(0.022),
            "tx": _fixed(2.0),
            "ty": _fixed(0.125),
            "tz": _fixed(1.23),
        },
        name="tsinghua",
    ),
    "cityscapes": ParamRanges(
        {
            "fx": (2262.52, 2268.36),
            "fy": (2225.540, 2265.301),
            "u0": (1045.53, 1096.98),
            "v0": (513.137, 519.277),
            "b": (0.209, 0.222),
            "d": (-4.675, 57.339),
            "theta_p": (0.038, 0.05),
            "tx": _fixed(1.7),
            "ty": (-0.1, 0.1),
            "tz": (1.18, 1.3),
        },
        name="cityscapes",
    ),
}


def get_preset(name: str) -> ParamRanges:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}") from None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw(rng: np.random.Generator, lo: float, hi: float) -> float:
    return lo if lo == hi else float(rng.uniform(lo, hi))


def sample_config(ranges: ParamRanges, seed, d_guard: float = DEFAULT_D_GUARD) -> CameraParams:
    """Draw one camera configuration uniformly inside ``ranges``.

    ``seed`` may be an int or a ``numpy.random.Generator``.  Disparities with
    ``|d| < d_guard`` are redrawn.
    """
    rng = _rng(seed)
    d_lo, d_hi = ranges.bounds["d"]
    if -d_guard < d_lo and d_hi < d_guard:
        raise EmptyRangeAfterGuard(f"disparity range [{d_lo}, {d_hi}] lies inside |d| < {d_guard}")
    vals = {}
    for k in CAMERA_PARAM_NAMES:
        if k == "fy" and ranges.tie_fy_to_fx:
            vals[k] = vals["fx"]
            continue
        lo, hi = ranges.bounds[k]
        x = _draw(rng, lo, hi)
        if k == "d":
            while abs(x) < d_guard:
                x = _draw(rng, lo, hi)
        vals[k] = x
    vals["theta_p"] = math.radians(vals["theta_p"])
    return CameraParams.from_dict(vals)


def sample_config_array(ranges: ParamRanges, n: int, seed, d_guard: float = DEFAULT_D_GUARD) -> np.ndarray:
    """``n`` configurations at once as an ``(n, 10)`` array (pitch in radians).

    Same distribution as :func:`sample_config`, different random stream.
    """
    rng = _rng(seed)
    d_lo, d_hi = ranges.bounds["d"]
    if -d_guard < d_lo and d_hi < d_guard:
        raise EmptyRangeAfterGuard(f"disparity range [{d_lo}, {d_hi}] lies inside |d| < {d_guard}")
    out = np.empty((n, len(CAMERA_PARAM_NAMES)))
    for j, k in enumerate(CAMERA_PARAM_NAMES):
        lo, hi = ranges.bounds[k]
        out[:, j] = rng.uniform(lo, hi, n) if lo < hi else lo
    if ranges.tie_fy_to_fx:
        out[:, 1] = out[:, 0]
    bad = np.abs(out[:, 5]) < d_guard
    while np.any(bad):
        out[bad, 5] = rng.uniform(d_lo, d_hi, int(bad.sum()))
        bad = np.abs(out[:, 5]) < d_guard
    out[:, 6] = np.radians(out[:, 6])
    return out


@dataclass(frozen=True, eq=False)
class SyntheticRecord:
    """One configuration with its observations and clean world points.

    ``params`` is the 13-vector ground truth (pitch in radians); its world
    heads hold the centroid of ``world``.
    """

    config_id: int
    params: np.ndarray
    observations: CorrespondenceSet
    world: np.ndarray
    noise_sigma: float = 0.0

    @property
    def camera(self) -> CameraParams:
        return CameraParams.from_array(self.params)

    def __eq__(self, other):
        if not isinstance(other, SyntheticRecord):
            return NotImplemented
        a, b = self.observations, other.observations
        return (
            self.config_id == other.config_id
            and self.noise_sigma == other.noise_sigma
            and np.array_equal(self.params, other.params)
            and np.array_equal(self.world, other.world)
            and np.array_equal(a.u, b.u)
            and np.array_equal(a.v, b.v)
            and np.array_equal(a.disparity, b.disparity, equal_nan=True)
        )


def _make_record(config_id, camera: CameraParams, u, v, disp, world, noise_sigma) -> SyntheticRecord:
    params = np.empty(N_PARAMS)
    params[:10] = camera.to_array()
    params[10:] = world.mean(axis=0)
    return SyntheticRecord(config_id, params, CorrespondenceSet(u, v, disp), world, noise_sigma)


def config_seed(seed: int, config_id: int) -> np.random.SeedSequence:
    """Independent sub-seed per configuration, so generation order never matters."""
    return np.random.SeedSequence([seed, config_id])


def generate_record(
    ranges: ParamRanges,
    config_id: int,
    pts_per_config: int,
    noise_sigma: float,
    seed: int,
    d_guard: float = DEFAULT_D_GUARD,
) -> SyntheticRecord:
    rng = np.random.default_rng(config_seed(seed, config_id))
    camera = sample_config(ranges, rng, d_guard)
    w_img = 2.0 * camera.intrinsics.u0
    h_img = 2.0 * camera.intrinsics.v0
    u = rng.uniform(0.0, w_img, pts_per_config)
    v = rng.uniform(0.0, h_img, pts_per_config)
    disp = np.full(pts_per_config, camera.d)
    world = project_points(camera.to_array(), u, v, disp)
    noise = rng.normal(0.0, 1.0, (2, pts_per_config)) * noise_sigma
    return _make_record(config_id, camera, u + noise[0], v + noise[1], disp, world, float(noise_sigma))


def generate_records(
    ranges: ParamRanges,
    n_configs: int,
    pts_per_config: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    d_guard: float = DEFAULT_D_GUARD,
) -> list[SyntheticRecord]:
    """Sample ``n_configs`` configurations, each with ``pts_per_config`` points.

    Pixels are uniform over ``[0, 2*u0] x [0, 2*v0]``; world points are
    computed from the clean pixels, then Gaussian noise of ``noise_sigma``
    pixels is added to ``(u, v)``.
    """
    if n_configs < 1 or pts_per_config < 1:
        raise ValueError("need at least one configuration and one point")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    return [
        generate_record(ranges, i, pts_per_config, noise_sigma, seed, d_guard) for i in range(n_configs)
    ]


def clean_pixels(record: SyntheticRecord) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free pixels recovered by projecting stored world points back."""
    p = record.camera
    e, i = p.extrinsics, p.intrinsics
    x, y, z = world_to_camera_arrays(*record.world.T, e.theta_p, e.tx, e.ty, e.tz)
    u, v, _ = camera_to_image_arrays(x, y, z, i.fx, i.fy, i.u0, i.v0, e.b)
    return u, v


# -- serialisation ---------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def degrees_exact(rad: float) -> float:
    """Degrees value whose conversion back to radians returns ``rad`` exactly.

    ``radians(degrees(x)) == x`` fails for roughly one value in seven, so
    neighbouring doubles are searched when the direct conversion misses.
    A few doubles have no degree preimage at all; for those the plain
    conversion is returned, which round-trips to within one ulp.
    """
    deg = math.degrees(rad)
    if math.radians(deg) == rad:
        return deg
    up = down = deg
    for _ in range(64):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        for cand in (up, down):
            if math.radians(cand) == rad:
                return cand
    return deg


def header(pts_per_config: int) -> str:
    cols = ["config_id", "noise_sigma", *CAMERA_PARAM_NAMES[:6], "theta_p_deg", *CAMERA_PARAM_NAMES[7:]]
    cols += [f"{c}_{i}" for i in range(pts_per_config) for c in ("u", "v", "disp")]
    cols += [f"{c}_{i}" for i in range(pts_per_config) for c in ("X", "Y", "Z")]
    return ",".join(cols)


def format_record(r: SyntheticRecord) -> str:
    cam = r.params[:10].copy()
    obs = r.observations
    disp = obs.disparity_for(r.params)
    fields = [str(int(r.config_id)), _fmt(r.noise_sigma)]
    fields += [_fmt(x) for x in cam[:6]]
    fields.append(_fmt(degrees_exact(float(cam[6]))))
    fields += [_fmt(x) for x in cam[7:]]
    fields += [_fmt(x) for x in np.column_stack([obs.u, obs.v, disp]).reshape(-1)]
    fields += [_fmt(x) for x in r.world.reshape(-1)]
    return ",".join(fields)


def dumps(records: list[SyntheticRecord]) -> str:
    if not records:
        raise ValueError("nothing to serialise")
    n = records[0].observations.n
    if any(r.observations.n != n for r in records):
        raise ValueError("all records in one file must have the same point count")
    buf = io.StringIO()
    buf.write(header(n) + "\n")
    for r in records:
        buf.write(format_record(r) + "\n")
    return buf.getvalue()


def parse_record(line: str, pts_per_config: int) -> SyntheticRecord:
    parts = line.strip().split(",")
    expected = 12 + 6 * pts_per_config
    if len(parts) != expected:
        raise DatasetFormatError(f"expected {expected} fields, found {len(parts)}")
    try:
        config_id = int(parts[0])
        vals = np.array([float(x) for x in parts[1:]])
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
    noise_sigma = float(vals[0])
    cam = vals[1:11].copy()
    cam[6] = math.radians(cam[6])
    obs = vals[11 : 11 + 3 * pts_per_config].reshape(pts_per_config, 3)
    world = vals[11 + 3 * pts_per_config :].reshape(pts_per_config, 3)
    return _make_record(
        config_id, CameraParams.from_array(cam), obs[:, 0], obs[:, 1], obs[:, 2], world, noise_sigma
    )


def loads(text: str) -> list[SyntheticRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetFormatError("empty dataset")
    cols = lines[0].split(",")
    if cols[:2] != ["config_id", "noise_sigma"] or (len(cols) - 12) % 6 != 0:
        raise DatasetFormatError("unrecognised dataset header")
    n = (len(cols) - 12) // 6
    if lines[0] != header(n):
        raise DatasetFormatError("unrecognised dataset header")
    return [parse_record(ln, n) for ln in lines[1:]]


def write_dataset(path, records: list[SyntheticRecord]) -> None:
    atomic_write_text(path, dumps(records))


def read_dataset(path) -> list[SyntheticRecord]:
    return loads(Path(path).read_text(encoding="utf-8"))


# -- custom range files ----------------------------------------------------


def dump_ranges(ranges: ParamRanges) -> str:
    lines = ["name,min,max"]
    lines += [f"{k},{_fmt(ranges.bounds[k][0])},{_fmt(ranges.bounds[k][1])}" for k in CAMERA_PARAM_NAMES]
    if ranges.tie_fy_to_fx:
        lines.append("tie_fy_to_fx,1,1")
    return "\n".join(lines) + "\n"


def load_ranges(text: str, name: str = "custom") -> ParamRanges:
    """Parse ``name,min,max`` lines (pitch in degrees) into :class:`ParamRanges`."""
    bounds, tie = {}, False
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#") or ln.startswith("name,"):
            continue
        try:
            key, lo, hi = (p.strip() for p in ln.split(","))
            lo_f, hi_f = float(lo), float(hi)
        except ValueError:
            raise DatasetFormatError(f"bad ranges line: {ln!r}") from None
        if key == "tie_fy_to_fx":
            tie = bool(lo_f)
        elif key in CAMERA_PARAM_NAMES:
            bounds[key] = (lo_f, hi_f)
        else:
            raise DatasetFormatError(f"unknown parameter {key!r} in ranges file")
    try:
        return ParamRanges(bounds, tie, name)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
