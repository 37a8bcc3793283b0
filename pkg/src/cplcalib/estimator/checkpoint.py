"""Plain-text checkpoints and epoch logs for :class:`MtlNet`.

A checkpoint is a UTF-8 file of named arrays::

    cplcalib-mtl 1
    meta topology sn
    meta loss_mode cpl_uniform
    array trunk0.W0 16 24
    <values, space separated>
    ...

Floats are written with 17 significant digits so a load reproduces the
weights bit for bit, and the same net always serialises to the same bytes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .._io import atomic_write_text
from ..cpl import PARAM_NAMES, LossReport
from ..errors import DatasetFormatError
from .mtl import MtlNet

MAGIC = "cplcalib-mtl 1"


def _arrays(net: MtlNet) -> list[tuple[str, np.ndarray]]:
    named = list(zip(net.parameter_names(), net.parameters()))
    named += [(f"branch{i}", br) for i, br in enumerate(net.branches)]
    named += [
        ("out_offset", net.out_offset),
        ("out_scale", net.out_scale),
        ("in_mean", net.in_mean),
        ("in_std", net.in_std),
    ]
    return named


def dumps_checkpoint(net: MtlNet) -> str:
    lines = [MAGIC, f"meta topology {net.topology}", f"meta loss_mode {net.loss_mode}"]
    lines.append("meta layers " + " ".join(str(len(t)) for t in net.trunks))
    for name, arr in _arrays(net):
        lines.append(" ".join(["array", name, *map(str, arr.shape)]))
        if np.issubdtype(arr.dtype, np.integer):
            lines.append(" ".join(str(int(x)) for x in arr.ravel()))
        else:
            lines.append(" ".join(format(float(x), ".17g") for x in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> MtlNet:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise DatasetFormatError("not a cplcalib checkpoint")
    meta, arrays = {}, {}
    i = 1
    try:
        while i < len(lines):
            parts = lines[i].split()
            if parts[0] == "meta":
                meta[parts[1]] = parts[2:]
                i += 1
            elif parts[0] == "array":
                name, shape = parts[1], tuple(int(s) for s in parts[2:])
                body = lines[i + 1].split() if i + 1 < len(lines) else []
                kind = int if name.startswith("branch") else float
                arr = np.array([kind(x) for x in body], dtype=np.int64 if kind is int else np.float64)
                arrays[name] = arr.reshape(shape)
                i += 2
            else:
                raise DatasetFormatError(f"line {i + 1}: unexpected {parts[0]!r}")
        layers = [int(n) for n in meta["layers"]]
        trunks = [
            [(arrays[f"trunk{t}.W{j}"], arrays[f"trunk{t}.b{j}"]) for j in range(n)] for t, n in enumerate(layers)
        ]
        return MtlNet(
            trunks=trunks,
            branches=[arrays[f"branch{t}"] for t in range(len(layers))],
            head_W=arrays["head.W"],
            head_b=arrays["head.b"],
            out_offset=arrays["out_offset"],
            out_scale=arrays["out_scale"],
            in_mean=arrays["in_mean"],
            in_std=arrays["in_std"],
            loss_mode=meta["loss_mode"][0],
            topology=meta["topology"][0],
        )
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(path, net: MtlNet) -> None:
    atomic_write_text(path, dumps_checkpoint(net))


def load_checkpoint(path) -> MtlNet:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))


def epoch_log(reports: list[LossReport], sep: str = ",") -> str:
    """One line per epoch: ``epoch, total, L_<name>..., [alpha_<name>...]``."""
    with_alpha = any(r.weights is not None for r in reports)
    cols = ["epoch", "total"] + [f"L_{n}" for n in PARAM_NAMES]
    if with_alpha:
        cols += [f"alpha_{n}" for n in PARAM_NAMES]
    rows = [sep.join(cols)]
    for epoch, r in enumerate(reports, 1):
        vals = [r.total, *r.per_param]
        if with_alpha:
            vals += list(r.weights)
        rows.append(sep.join([str(epoch)] + [format(float(x), ".17g") for x in vals]))
    return "\n".join(rows) + "\n"
