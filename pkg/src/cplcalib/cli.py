"""Command-line front end.

Every run that writes an output file also writes ``<out>.manifest``: a flat
``key=value`` record of the subcommand, resolved flags, seed, paths, tool
version and wall-clock duration.  ``cplcalib rerun <manifest>`` replays it.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric abort, 5 check failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen
from ._io import atomic_write_text
from .camera_model import CAMERA_PARAM_NAMES, CameraParams, project_points
from .cpl import finite_difference_jacobian, relative_error, world_point_jacobian
from .errors import CalibrationError, DatasetFormatError, ShapeMismatch
from .estimator import (
    SolverConfig,
    average_predictor,
    epoch_log,
    evaluate,
    fit_parameters,
    load_checkpoint,
    mtl_train,
    net_for_records,
    perfect_predictor,
    samples_from_records,
    save_checkpoint,
)
from .metrics import evaluation_table

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4, 5
GRADCHECK_TOL = 1e-5
MODES = {"baseline": "baseline_mae", "cpl-u": "cpl_uniform", "cpl-a": "cpl_adaptive"}
CVGL_WIDTH = 112.0

log = logging.getLogger("cplcalib")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("layer widths must be positive")
    return vals


def _ranges(args) -> datagen.ParamRanges:
    if getattr(args, "ranges", None):
        try:
            return datagen.load_ranges(Path(args.ranges).read_text(encoding="utf-8"), name=Path(args.ranges).stem)
        except DatasetFormatError as exc:
            raise UsageError(f"bad ranges file: {exc}")
    return datagen.get_preset(args.preset or "cvgl")


def _solver_cfg(args) -> SolverConfig:
    extra = {"plateau_epochs": args.plateau_epochs} if getattr(args, "plateau_epochs", 0) else {}
    return SolverConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        early_stopping_patience=args.patience,
        seed=args.seed,
        **extra,
    )


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> list[Path]:
    ranges = _ranges(args)
    records = datagen.generate_records(ranges, args.configs, args.points, args.noise, args.seed, args.d_guard)
    datagen.write_dataset(args.out, records)
    P = np.array([r.params[:10] for r in records])
    P[:, 6] = np.degrees(P[:, 6])
    print(f"records: {len(records)} ({args.points} points each) -> {args.out}")
    print("param,bound_min,bound_max,sample_min,sample_max")
    for j, k in enumerate(CAMERA_PARAM_NAMES):
        lo, hi = ranges.bounds[k]
        print(f"{k},{lo:g},{hi:g},{P[:, j].min():.6g},{P[:, j].max():.6g}")
    return [Path(args.out)]


def cmd_project(args) -> list[Path]:
    records = datagen.read_dataset(args.dataset)
    rows = ["config_id,point,u,v,disparity,X,Y,Z"]
    for r in records:
        obs = r.observations
        disp = obs.disparity_for(r.params)
        world = project_points(r.params, obs.u, obs.v, disp)
        for i in range(obs.n):
            vals = [obs.u[i], obs.v[i], disp[i], *world[i]]
            rows.append(f"{r.config_id},{i}," + ",".join(_fmt(x) for x in vals))
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    print(f"projected {sum(r.observations.n for r in records)} points from {len(records)} records -> {args.out}")
    return [Path(args.out)]


def _initial_guess(record, mode: str, scale: float, fix, seed: int) -> CameraParams:
    p = record.params[:10].copy()
    if mode == "perturb":
        rng = np.random.default_rng([seed, record.config_id])
        jitter = 1.0 + scale * rng.uniform(-1.0, 1.0, 10)
        free = np.array([k not in fix for k in CAMERA_PARAM_NAMES])
        p[free] *= jitter[free]
    return CameraParams.from_array(p)


RESULT_COLUMNS = ["config_id", "converged", "epochs", "loss"] + [
    "theta_p_deg" if k == "theta_p" else k for k in CAMERA_PARAM_NAMES
]


def cmd_calibrate(args) -> list[Path]:
    records = datagen.read_dataset(args.dataset)
    fix = _csv_list(args.fix)
    unknown = set(fix) - set(CAMERA_PARAM_NAMES)
    if unknown:
        raise UsageError(f"--fix: unknown parameters {sorted(unknown)}; valid: {','.join(CAMERA_PARAM_NAMES)}")
    cfg = _solver_cfg(args)
    rows, trace_rows = [",".join(RESULT_COLUMNS)], ["config_id,epoch,loss"]
    worst = np.zeros(10)
    for r in records:
        init = _initial_guess(r, args.init, args.perturb, fix, args.seed)
        res = fit_parameters(r.observations, r.world, init, cfg, fix=fix)
        p = res.params.to_array()
        err = np.abs(p - r.params[:10])
        err[6] = math.degrees(err[6])
        worst = np.maximum(worst, err)
        p[6] = datagen.degrees_exact(p[6])
        final = res.loss_trace[-1]
        rows.append(f"{r.config_id},{int(res.converged)},{res.epochs_run},{_fmt(final)}," + ",".join(_fmt(x) for x in p))
        trace_rows += [f"{r.config_id},{e},{_fmt(v)}" for e, v in enumerate(res.loss_trace, 1)]
        log.info("config %d: epochs=%d loss=%.3g converged=%s", r.config_id, res.epochs_run, final, res.converged)
    trace = Path(str(args.out) + ".trace.csv")
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    atomic_write_text(trace, "\n".join(trace_rows) + "\n")
    print(f"calibrated {len(records)} records -> {args.out}")
    print("max abs error: " + " ".join(f"{k}={e:.3g}" for k, e in zip(RESULT_COLUMNS[4:], worst)))
    return [Path(args.out), trace]


def read_calibration(path) -> dict[int, np.ndarray]:
    """Calibration results keyed by config id, pitch converted back to radians."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != RESULT_COLUMNS:
        raise DatasetFormatError(f"{path}: not a calibration result file")
    out = {}
    for ln, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        try:
            p = np.array([float(x) for x in parts[4:]])
            cid = int(parts[0])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{ln}: {exc}") from exc
        if p.size != 10:
            raise DatasetFormatError(f"{path}:{ln}: expected 10 parameters")
        p[6] = math.radians(p[6])
        out[cid] = p
    return out


def cmd_train(args) -> list[Path]:
    records = datagen.read_dataset(args.dataset)
    ranges = _ranges(args)
    mode = MODES[args.mode]
    net = net_for_records(records, ranges, args.hidden, args.topology, mode, args.seed)
    trained, hist = mtl_train(
        net, samples_from_records(records), _solver_cfg(args), reduce_on_plateau=args.plateau_epochs > 0
    )
    log_path = Path(str(args.out) + ".log.csv")
    save_checkpoint(args.out, trained)
    atomic_write_text(log_path, epoch_log(hist.reports))
    first, last = hist.totals[0], hist.totals[-1]
    print(f"trained {mode}/{args.topology} for {hist.epochs_run} epochs; loss {first:.6g} -> {last:.6g} -> {args.out}")
    return [Path(args.out), log_path]


def cmd_evaluate(args) -> list[Path]:
    test = datagen.read_dataset(args.dataset)
    width = args.width
    if width is None:
        if args.preset != "cvgl":
            raise UsageError("--width is required unless --preset cvgl is given")
        width = CVGL_WIDTH
    sources = [bool(args.model), bool(args.calibration), bool(args.predictor)]
    if sum(sources) != 1:
        raise UsageError("give exactly one of --model, --calibration, --predictor")
    if args.model:
        table = evaluate(load_checkpoint(args.model), test, width, signed=args.signed)
    elif args.calibration:
        fitted = read_calibration(args.calibration)
        missing = [r.config_id for r in test if r.config_id not in fitted]
        if missing:
            raise DatasetFormatError(f"calibration file lacks config ids {missing[:5]}")
        gt = np.array([r.params[:10] for r in test])
        pred = np.array([fitted[r.config_id] for r in test])
        table = evaluation_table(gt, pred, width, signed=args.signed)
    elif args.predictor == "perfect":
        table = evaluate(perfect_predictor, test, width, signed=args.signed)
    else:
        if not args.train:
            raise UsageError("--predictor average needs --train")
        table = evaluate(average_predictor(datagen.read_dataset(args.train), width), test, width, signed=args.signed)
    text = table.to_record() if args.format == "record" else table.to_delimited()
    if args.out:
        atomic_write_text(args.out, text)
        print(f"evaluated {table.sample_count} records -> {args.out}")
        return [Path(args.out)]
    sys.stdout.write(text)
    return []


def gradcheck(samples: int, seed: int) -> float:
    """Worst relative error between analytic and finite-difference Jacobians."""
    rng = np.random.default_rng(seed)
    ranges = datagen.get_preset("cvgl")
    worst = 0.0
    for _ in range(samples):
        p = datagen.sample_config(ranges, rng).to_array()
        u = rng.uniform(0.0, 2.0 * p[2])
        v = rng.uniform(0.0, 2.0 * p[3])
        J = world_point_jacobian(p, u, v)
        F = finite_difference_jacobian(p, u, v)
        worst = max(worst, float(relative_error(J, F).max()))
    return worst


def cmd_gradcheck(args) -> list[Path]:
    worst = gradcheck(args.samples, args.seed)
    ok = worst <= GRADCHECK_TOL
    text = f"samples={args.samples}\nmax_relative_error={worst:.6e}\ntolerance={GRADCHECK_TOL:g}\npass={int(ok)}\n"
    sys.stdout.write(text)
    written = []
    if args.out:
        atomic_write_text(args.out, text)
        written.append(Path(args.out))
    if not ok:
        raise CheckFailed(f"max relative error {worst:.3e} exceeds {GRADCHECK_TOL:g}")
    return written


# -- parser / manifest -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", help="output path")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="cplcalib", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cplcalib {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def preset_flags(p):
        p.add_argument("--preset", choices=sorted(datagen.PRESETS), help="parameter-range preset")
        p.add_argument("--ranges", help="custom ranges file (name,min,max lines)")

    def optim_flags(p, lr):
        p.add_argument("--lr", type=float, default=lr)
        p.add_argument("--batch-size", type=int, default=16)
        p.add_argument("--max-epochs", type=int, default=200)
        p.add_argument("--patience", type=int, default=20)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic correspondence dataset")
    preset_flags(g)
    g.add_argument("--configs", type=int, default=50)
    g.add_argument("--points", type=int, default=32)
    g.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    g.add_argument("--d-guard", type=float, default=datagen.DEFAULT_D_GUARD)

    p = sub.add_parser("project", parents=[common], help="project dataset pixels to world coordinates")
    p.add_argument("--dataset", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="recover camera parameters per record")
    c.add_argument("--dataset", required=True)
    c.add_argument("--fix", default="", help="comma-separated parameters held at their initial value")
    c.add_argument("--init", choices=["gt", "perturb"], default="perturb")
    c.add_argument("--perturb", type=float, default=0.05, help="relative perturbation of free parameters")
    optim_flags(c, 0.3)

    t = sub.add_parser("train", parents=[common], help="train the multi-task regressor")
    t.add_argument("--dataset", required=True)
    preset_flags(t)
    t.add_argument("--mode", choices=list(MODES), default="cpl-u")
    t.add_argument("--topology", choices=["sn", "mn"], default="sn")
    t.add_argument("--hidden", type=_int_tuple, default=(64, 64), help="trunk widths, e.g. 64,64")
    t.add_argument(
        "--plateau-epochs", type=int, default=0, help="halve the learning rate after this many epochs without improvement (0: off)"
    )
    optim_flags(t, 1e-3)

    e = sub.add_parser("evaluate", parents=[common], help="NMAE and hFOV accuracy table")
    e.add_argument("--dataset", required=True, help="test dataset")
    e.add_argument("--model", help="checkpoint from train")
    e.add_argument("--calibration", help="result file from calibrate")
    e.add_argument("--predictor", choices=["perfect", "average"])
    e.add_argument("--train", help="training dataset for --predictor average")
    e.add_argument("--preset", choices=sorted(datagen.PRESETS))
    e.add_argument("--width", type=float, help="image width in pixels for hFOV")
    e.add_argument("--signed", action="store_true", help="signed NMAE")
    e.add_argument("--format", choices=["csv", "record"], default="csv")

    k = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference Jacobian")
    k.add_argument("--samples", type=int, default=100)

    r = sub.add_parser("rerun", help="replay a run from its manifest")
    r.add_argument("manifest")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "project": cmd_project,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}
REQUIRES_OUT = {"generate", "project", "calibrate", "train"}


def manifest_text(args, argv: list[str], outputs: list[Path], duration: float) -> str:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "verbose")}
    lines = [
        "tool=cplcalib",
        f"version={__version__}",
        f"subcommand={args.command}",
        f"seed={args.seed}",
        "argv=" + shlex.join(argv),
    ]
    for k, v in flags.items():
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        lines.append(f"flag.{k}={'' if v is None else v}")
    lines.append("outputs=" + ",".join(str(p) for p in outputs))
    lines.append(f"duration_s={duration:.3f}")
    return "\n".join(lines) + "\n"


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, val = line.partition("=")
        if sep:
            out[key] = val
    if "argv" not in out:
        raise DatasetFormatError(f"{path}: manifest has no argv entry")
    return out


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command == "rerun":
        try:
            replay = shlex.split(read_manifest(args.manifest)["argv"])
        except (OSError, DatasetFormatError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        return run(replay)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in REQUIRES_OUT and not args.out:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return EXIT_USAGE
    start = time.perf_counter()
    try:
        outputs = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ShapeMismatch as exc:
        print(f"error: incompatible inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        if args.out:
            _write_manifest(args, argv, [Path(args.out)], time.perf_counter() - start)
        return EXIT_CHECK
    except (CalibrationError, ZeroDivisionError, FloatingPointError) as exc:
        print(f"numeric abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if outputs:
        _write_manifest(args, argv, outputs, time.perf_counter() - start)
    return EXIT_OK


def _write_manifest(args, argv, outputs, duration):
    atomic_write_text(Path(str(args.out) + ".manifest"), manifest_text(args, argv, outputs, duration))


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
