import json
import subprocess
import sys

import numpy as np
import pytest

from enrnn import cli
from enrnn.errors import SolverError
from enrnn.tasks import load_array

TINY = ["--seq-len", "10", "--hidden", "8", "--split", "5", "--batch-size", "5",
        "--train-size", "20", "--test-size", "10", "--iterations", "6"]


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "adding.cfg"
    path.write_text(json.dumps({"task": "adding", "seed": 3, "iterations": 6, "seq_len": 10, "hidden": 8,
                                "split": 5, "batch_size": 5, "train_size": 20, "test_size": 10}))
    return path


def test_train_writes_outputs_and_override_wins(tmp_path, cfg_file):
    out = tmp_path / "runs" / "a1"
    assert cli.main(["train", "--config", str(cfg_file), "--seed", "7", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "ckpt", "run.json"}
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["seed"] == 7
    assert manifest["config"]["iterations"] == 6
    assert manifest["build"].startswith("0.1.0+")
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "iteration,epoch,train_loss,eval_loss,rho_T,specnorm_WS,active,wall_s"


def _strip_wall(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_same_invocation_gives_identical_files(tmp_path, cfg_file):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert cli.main(["train", "--config", str(cfg_file), "--out", str(out)]) == 0
    a, b = outs
    assert _strip_wall((a / "metrics.csv").read_text()) == _strip_wall((b / "metrics.csv").read_text())
    assert (a / "ckpt").read_bytes() != b""
    # the checkpoint embeds the output path through the config; compare everything else
    ja, jb = (json.loads((d / "run.json").read_text()) for d in outs)
    ja["config"].pop("out"), jb["config"].pop("out")
    assert ja == jb


def test_same_out_dir_reruns_are_byte_identical(tmp_path, cfg_file):
    out = tmp_path / "same"
    argv = ["train", "--config", str(cfg_file), "--out", str(out)]
    cli.main(argv)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    cli.main(argv)
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first["ckpt"] == second["ckpt"] and first["run.json"] == second["run.json"]
    assert _strip_wall(first["metrics.csv"].decode()) == _strip_wall(second["metrics.csv"].decode())


def test_gradcheck_command(tmp_path, capsys):
    out = tmp_path / "gc"
    argv = ["gradcheck", "--hidden", "10", "--split", "6", "--seq-len", "8", "--batch-size", "3", "--out", str(out)]
    assert cli.main(argv) == 0
    report = (out / "gradcheck.txt").read_text()
    for name in ("A", "T", "U_L", "W_C", "V_S", "c"):
        assert any(line.split()[0] == name for line in report.splitlines()[1:-1])
    assert "PASS" in capsys.readouterr().out
    assert cli.main(argv + ["--tol", "1e-30"]) == 2


def test_heatmap_spectrum_eval_from_checkpoint(tmp_path, cfg_file):
    run = tmp_path / "a1"
    cli.main(["train", "--config", str(cfg_file), "--out", str(run)])
    hm = tmp_path / "hm"
    assert cli.main(["heatmap", "--checkpoint", str(run / "ckpt"), "--task", "adding",
                     "--seq-len", "12", "--out", str(hm)]) == 0
    for which in ("short", "long"):
        grid = np.loadtxt(hm / f"heatmap_{which}.csv", delimiter=",")
        assert grid.shape == (12, 12)
        assert np.all(np.triu(grid, 1) == 0)
    sp = tmp_path / "sp"
    assert cli.main(["spectrum", "--checkpoint", str(run / "ckpt"), "--out", str(sp)]) == 0
    lines = (sp / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "re,im,modulus" and len(lines) == 1 + 3
    ev = tmp_path / "ev"
    assert cli.main(["eval", "--checkpoint", str(run / "ckpt"), "--out", str(ev)]) == 0
    rep = json.loads((ev / "eval.json").read_text())
    assert rep["baseline"] == 0.167 and np.isfinite(rep["eval_loss"])


def test_heatmap_bound_audit(tmp_path):
    out = tmp_path / "hb"
    assert cli.main(["heatmap", "--activation", "relu", "--bound-lags", "5", "--out", str(out)] + TINY) == 0
    # rotation-block initialization keeps ||W_S|| = max |gamma| < 1, so the audit applies
    rows = (out / "bound.csv").read_text().splitlines()
    assert len(rows) == 6 and all(r.endswith(",1") for r in rows[1:])


def test_sweep_and_gen_data(tmp_path):
    sw = tmp_path / "sw"
    assert cli.main(["sweep", "--splits", "0,5,8", "--out", str(sw)] + TINY) == 0
    table = (sw / "sweep.csv").read_text().splitlines()
    assert table[0].startswith("q,short,iteration")
    assert {tuple(r.split(",")[:2]) for r in table[1:]} == {("0", "8"), ("5", "3"), ("8", "0")}
    gd = tmp_path / "gd"
    assert cli.main(["gen-data", "--task", "copying", "--out", str(gd)] + TINY) == 0
    x = load_array(gd / "train_inputs.enr")
    assert x.shape == (20, 30, 10)
    assert load_array(gd / "test_targets.enr").shape == (10, 30)


def test_outputs_stay_in_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["train", "--out", "only"] + TINY) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"only"}


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train", "--no-such-flag", "1"],
    ["train", "--hidden", "abc"],
    ["train", "--hidden", "4", "--split", "9"],
    ["eval", "--checkpoint", "/nonexistent/ckpt"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 1
    assert capsys.readouterr().err


def test_bad_config_key_exits_1(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(json.dumps({"hidden": 8, "learning_rate": 0.1}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1


def test_solver_failure_exits_2(tmp_path, monkeypatch):
    def fail(*a, **k):
        raise SolverError("Francis QR did not converge", residual=1.0)

    monkeypatch.setattr(cli, "train", fail)
    assert cli.main(["train", "--out", str(tmp_path / "f")] + TINY) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "enrnn.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "enrnn.cli", "train", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
