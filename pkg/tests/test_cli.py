import json
import subprocess
import sys

import numpy as np
import pytest

from socdiff import bench, fileio
from socdiff.cli import main
from socdiff.geometry import Aabb
from socdiff.world import Problem, Scene

TINY = {"model": {"hidden_channels": 8, "depth": 2, "time_embed_dim": 8, "n_waypoints": 12, "T": 16},
        "train": {"steps": 30, "batch_size": 16}, "data": {"n_train": 64, "per_type": 2}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY))
    assert main(["gen-data", "--config", str(d / "tiny.json"), "--seed", "5", "--out-dir", str(d)]) == 0
    assert main(["train", "--config", str(d / "tiny.json"), "--seed", "5", "--out-dir", str(d)]) == 0
    return d


def run(d, *args):
    return main([args[0], "--config", str(d / "tiny.json"), "--out-dir", str(d / "out"), *args[1:]])


def test_gen_data_outputs_and_determinism(workdir, tmp_path):
    suite = fileio.read_suite(workdir / "suite.json")
    assert len(suite) == 8 and suite.seed == 5
    assert fileio.read_dataset(workdir / "train.npy").shape == (64, 12, 2)
    assert main(["gen-data", "--config", str(workdir / "tiny.json"), "--seed", "5", "--out-dir", str(tmp_path)]) == 0
    for name in ("suite.json", "train.npy"):
        assert (tmp_path / name).read_bytes() == (workdir / name).read_bytes()


def test_gen_data_full_suite_size(tmp_path):
    assert main(["gen-data", "--suite", "--seed", "42", "--per-type", "50", "--out-dir", str(tmp_path)]) == 0
    assert len(fileio.read_suite(tmp_path / "suite.json")) == 200
    assert not (tmp_path / "train.npy").exists()


def test_usage_errors_have_no_side_effects(tmp_path):
    out = tmp_path / "never"
    assert main(["gen-data", "--per-type", "0", "--out-dir", str(out)]) == 2
    assert main(["plan", "--K", "0", "--out-dir", str(out)]) == 2
    assert main(["bench", "--cells", "dynamic/Other/guided", "--suite-file", "x", "--checkpoint", "y",
                 "--out-dir", str(out)]) == 2
    assert main(["no-such-command"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"guidance": {"omega": 1}}))
    assert main(["gen-data", "--config", str(bad), "--out-dir", str(out)]) == 2
    bad.write_text("{not json")
    assert main(["gen-data", "--config", str(bad), "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_io_errors(tmp_path):
    assert main(["train", "--dataset-file", str(tmp_path / "missing.npy"), "--out-dir", str(tmp_path)]) == 4
    assert main(["bench", "--suite-file", str(tmp_path / "none.json"), "--checkpoint", "x",
                 "--out-dir", str(tmp_path)]) == 4
    assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == 4


def test_train_outputs(workdir, tmp_path, capsys):
    lines = (workdir / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 1 + 30
    assert all(int(s) == k + 1 and float(v) > 0 for k, (s, v) in enumerate(l.split(",") for l in lines[1:]))
    # seeded rerun gives the same checkpoint and loss curve
    cfg = workdir / "tiny.json"
    args = ["train", "--config", str(cfg), "--seed", "5", "--dataset-file", str(workdir / "train.npy"),
            "--out-dir", str(tmp_path)]
    assert main(args) == 0
    assert "final smoothed loss" in capsys.readouterr().out
    assert (tmp_path / "loss.csv").read_bytes() == (workdir / "loss.csv").read_bytes()
    assert (tmp_path / "model.json").read_bytes() == (workdir / "model.json").read_bytes()


def _problem_file(d, scene, name):
    path = d / name
    fileio.write_problem(path, Problem((-0.8, 0.0), (0.8, 0.0), scene))
    return path


def test_plan_exit_codes(workdir):
    ckpt = str(workdir / "model.json")
    empty = _problem_file(workdir, Scene(()), "empty.json")
    assert run(workdir, "plan", "--checkpoint", ckpt, "--problem", str(empty), "--K", "4", "--svg", "--trace") == 0
    out = workdir / "out"
    traj = fileio.read_trajectory(out / "trajectory.json")
    assert traj.shape == (12, 2) and tuple(traj[0]) == (-0.8, 0.0)
    assert (out / "plan.svg").read_text().startswith("<svg")
    assert len((out / "trace.csv").read_text().splitlines()) == 1 + 16
    first = (out / "trajectory.json").read_bytes()
    assert run(workdir, "plan", "--checkpoint", ckpt, "--problem", str(empty), "--K", "4") == 0
    assert (out / "trajectory.json").read_bytes() == first
    walled = _problem_file(workdir, Scene((Aabb((-0.1, -1.0), (0.1, 1.0)),)), "walled.json")
    assert run(workdir, "plan", "--checkpoint", ckpt, "--problem", str(walled), "--K", "4") == 3


def test_plan_config_errors(workdir):
    ckpt = str(workdir / "model.json")
    empty = _problem_file(workdir, Scene(()), "empty.json")
    assert run(workdir, "plan", "--checkpoint", ckpt, "--problem", str(empty), "--T", "32") == 2
    assert run(workdir, "plan", "--checkpoint", ckpt, "--suite-file", str(workdir / "suite.json"),
               "--index", "99") == 2
    assert run(workdir, "plan", "--checkpoint", ckpt) == 2


def _bench(d, out, *extra):
    return main(["bench", "--config", str(d / "tiny.json"), "--checkpoint", str(d / "model.json"),
                 "--suite-file", str(d / "suite.json"), "--K", "4", "--out-dir", str(out), *extra])


def test_bench_outputs(workdir):
    out = workdir / "bench"
    assert _bench(workdir, out, "--limit", "3") == 0
    rows = bench.read_results(out / "results.csv")
    assert len(rows) == 20 * 3
    summary = {r["cell"]: r for r in _read_csv(out / "summary.csv")}
    assert len(summary) == 20
    for cell, s in summary.items():
        mine = [r for r in rows if r["cell"] == cell]
        assert float(s["success_rate"]) == pytest.approx(100.0 * sum(r["success"] for r in mine) / len(mine))
    for name in ("table.txt", "trigger_hist.svg", "ks.csv", "u_curve.svg", "bench_config.json"):
        assert (out / name).exists(), name
    assert sorted(p.name for p in (out / "traces").iterdir()) == ["Corridor.csv", "Cubby.csv"]
    # the plot command re-renders the same figures from the saved files
    replot = workdir / "replot"
    assert main(["plot", "--bench-dir", str(out), "--T", "16", "--out-dir", str(replot)]) == 0
    for name in ("trigger_hist.svg", "u_curve.svg", "ks.csv"):
        assert (replot / name).read_bytes() == (out / name).read_bytes()


def test_bench_zero_scale_guided_equals_unguided(workdir):
    out = workdir / "bench_w0"
    cells = "dynamic/PredictedTau0/guided,dynamic/PredictedTau0/unguided"
    assert _bench(workdir, out, "--guidance-scale", "0", "--cells", cells, "--no-plots") == 0
    rows = bench.read_results(out / "results.csv")
    g = [(r["problem"], r["success"], r["best_cost"], r["n_valid"]) for r in rows if r["guided"]]
    u = [(r["problem"], r["success"], r["best_cost"], r["n_valid"]) for r in rows if not r["guided"]]
    assert len(g) == 8 and g == u


def test_bench_independent_of_workers(workdir):
    a, b = workdir / "w1", workdir / "w2"
    cells = "dynamic/PredictedTau0/guided,T/2/NoisyTauT/guided"
    assert _bench(workdir, a, "--cells", cells, "--workers", "1") == 0
    assert _bench(workdir, b, "--cells", cells, "--workers", "2") == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "socdiff", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-data" in proc.stdout


def _read_csv(path):
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
