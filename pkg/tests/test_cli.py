import subprocess
import sys

import numpy as np
import pytest

from cplcalib import cli, datagen


def strip_duration(text):
    return "\n".join(line for line in text.splitlines() if not line.startswith("duration_s="))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.run(["generate", "--preset", "cvgl", "--configs", "6", "--points", "8", "--seed", "7", "--out", "d.csv"]) == 0
    assert cli.run(["generate", "--preset", "cvgl", "--configs", "12", "--points", "8", "--seed", "8", "--out", "tr.csv"]) == 0
    return tmp_path


RUNS = {
    "generate": ["generate", "--preset", "cvgl", "--configs", "3", "--points", "4", "--noise", "0.5", "--seed", "1", "--out", "g.csv"],
    "project": ["project", "--dataset", "d.csv", "--out", "p.csv"],
    "calibrate": ["calibrate", "--dataset", "d.csv", "--fix", "b,fx,fy,u0,v0", "--seed", "2", "--out", "c.csv"],
    "train": ["train", "--dataset", "tr.csv", "--mode", "cpl-a", "--hidden", "8", "--max-epochs", "5", "--out", "m.ck"],
    "evaluate": ["evaluate", "--dataset", "d.csv", "--predictor", "average", "--train", "tr.csv", "--preset", "cvgl", "--out", "e.csv"],
    "gradcheck": ["gradcheck", "--samples", "20", "--seed", "1", "--out", "k.txt"],
}


@pytest.mark.parametrize("name", sorted(RUNS))
def test_subcommands_are_byte_reproducible(workdir, name):
    argv = RUNS[name]
    out = argv[argv.index("--out") + 1]
    assert cli.run(argv) == 0
    produced = sorted(p for p in workdir.iterdir() if p.name.startswith(out))
    first = {p.name: p.read_bytes() for p in produced}
    assert cli.run(argv) == 0
    for p in produced:
        if p.name.endswith(".manifest"):
            assert strip_duration(p.read_text()) == strip_duration(first[p.name].decode())
        else:
            assert p.read_bytes() == first[p.name], p.name
    assert (workdir / f"{out}.manifest").exists()


def test_manifest_rerun_reproduces_outputs(workdir):
    assert cli.run(RUNS["train"]) == 0
    ck = (workdir / "m.ck").read_bytes()
    (workdir / "m.ck").unlink()
    manifest = (workdir / "m.ck.manifest").read_text()
    assert "subcommand=train" in manifest and "flag.mode=cpl-a" in manifest and "seed=0" in manifest
    assert cli.run(["rerun", "m.ck.manifest"]) == 0
    assert (workdir / "m.ck").read_bytes() == ck


def test_generated_file_properties(workdir):
    assert cli.run(["generate", "--preset", "cvgl", "--configs", "50", "--points", "32", "--seed", "7", "--out", "big.csv"]) == 0
    recs = datagen.read_dataset(workdir / "big.csv")
    assert len(recs) == 50
    assert all(r.params[2] == 56.0 and r.params[3] == 56.0 for r in recs)


def test_calibrate_recovers_and_gt_init_converges(workdir, capsys):
    assert cli.run(["calibrate", "--dataset", "d.csv", "--fix", "b,fx,fy,u0,v0", "--init", "gt", "--out", "g.csv"]) == 0
    rows = [line.split(",") for line in (workdir / "g.csv").read_text().splitlines()[1:]]
    assert all(r[1] == "1" and r[2] == "1" for r in rows)
    assert cli.run(RUNS["calibrate"]) == 0
    fitted = cli.read_calibration(workdir / "c.csv")
    for r in datagen.read_dataset(workdir / "d.csv"):
        assert abs(np.degrees(fitted[r.config_id][6] - r.params[6])) < 1e-3
    assert (workdir / "c.csv.trace.csv").exists()


def test_evaluate_perfect_and_calibration(workdir, capsys):
    assert cli.run(["evaluate", "--dataset", "d.csv", "--predictor", "perfect", "--width", "112"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "fx,fy,u0,v0,b,d,tx,ty,tz,theta_p"
    assert lines[1] == ",".join(["0"] * 10) and lines[3] == ",".join(["1"] * 6)
    assert cli.run(RUNS["calibrate"]) == 0
    assert cli.run(["evaluate", "--dataset", "d.csv", "--calibration", "c.csv", "--preset", "cvgl", "--format", "record"]) == 0
    assert "nmae_fx=0" in capsys.readouterr().out


def test_train_alpha_rows_sum_to_thirteen(workdir):
    assert cli.run(RUNS["train"]) == 0
    lines = (workdir / "m.ck.log.csv").read_text().splitlines()
    assert len(lines) == 6
    for line in lines[1:]:
        assert abs(sum(float(x) for x in line.split(",")[-13:]) - 13) <= 1e-12
    assert cli.run(["evaluate", "--dataset", "tr.csv", "--model", "m.ck", "--width", "112"]) == 0


def test_exit_codes(workdir, capsys, monkeypatch):
    assert cli.run(["generate", "--preset", "unknown", "--out", "x.csv"]) == 2
    assert "cvgl" in capsys.readouterr().err
    assert cli.run(["generate", "--preset", "cvgl"]) == 2
    assert cli.run(["evaluate", "--dataset", "d.csv", "--predictor", "perfect"]) == 2
    assert cli.run(["calibrate", "--dataset", "d.csv", "--fix", "yaw", "--out", "x.csv"]) == 2
    assert cli.run(["calibrate", "--dataset", "missing.csv", "--out", "x.csv"]) == 3
    text = (workdir / "d.csv").read_text()
    (workdir / "bad.csv").write_text(text.replace("config_id", "cfg", 1))
    assert cli.run(["calibrate", "--dataset", "bad.csv", "--out", "x.csv"]) == 3
    # a run starting at d = 0 aborts numerically
    recs = datagen.read_dataset(workdir / "d.csv")
    zero_d = [datagen.SyntheticRecord(r.config_id, np.where(np.arange(13) == 5, 0.0, r.params), r.observations.without_disparity(), r.world) for r in recs]
    (workdir / "z.csv").write_text(datagen.dumps(zero_d).replace(",nan", ",0"))
    assert cli.run(["calibrate", "--dataset", "z.csv", "--init", "gt", "--fix", "b,fx,fy,u0,v0", "--out", "x.csv"]) == 4
    monkeypatch.setattr(cli, "GRADCHECK_TOL", 0.0)
    assert cli.run(["gradcheck", "--samples", "3"]) == 5
    assert cli.run(["--version"]) == 0


def test_gradcheck_via_subprocess_is_fast(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "cplcalib", "gradcheck", "--samples", "100", "--seed", "1"],
        capture_output=True, text=True, cwd=tmp_path,
    )
    assert res.returncode == 0
    err = float(res.stdout.split("max_relative_error=")[1].split()[0])
    assert err < 1e-5
