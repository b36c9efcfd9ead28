import json
import subprocess
import sys

import pytest

from bfopt import cli

SMALL = """\
minutes = 4320
plant.n_channels = 30
featsel.rounds = 10
model.hidden_t = 4
model.hidden_all = 6
train.epochs = 2
train.batch_size = 64
optim.iterations = 3
closed_loop.warmup_minutes = 2880
closed_loop.duration = 40
closed_loop.iterations = 2
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "small.txt").write_text(SMALL)
    assert cli.main(["--config", str(root / "small.txt"), "--seed", "5", "pipeline", "--out", str(root / "out")]) == 0
    return root


def test_pipeline_writes_every_artifact(small_run):
    out = small_run / "out"
    for name in ("plant.csv", "discretized.csv", "sidecar.csv", "importance.csv", "selected.txt", "report.json",
                 "report.csv", "optimize/policy.json", "optimize/trace.csv", "closed_loop/closed_loop.csv",
                 "closed_loop/closed_loop_summary.json", "run_config.txt", "timings.json",
                 "checkpoints/mall/params.bin", "checkpoints/mt-hybrid/loss_curve.csv"):
        assert (out / name).is_file(), name
    assert len((out / "selected.txt").read_text().split()) == 25
    report = json.loads((out / "report.json").read_text())
    assert {"models", "persistence", "improvement_vs_persistence", "comparison"} <= set(report)
    policy = json.loads((out / "optimize/policy.json").read_text())
    assert policy["within_bounds"] and len(policy["pci_raw"]) == 5
    assert "seed = 5" in (out / "run_config.txt").read_text()
    summary = json.loads((out / "closed_loop/closed_loop_summary.json").read_text())
    assert summary["n_solves"] == 4
    assert len((out / "closed_loop/closed_loop.csv").read_text().splitlines()) == 41


def test_single_commands_reuse_pipeline_outputs(small_run, tmp_path):
    out = small_run / "out"
    cfg = ["--config", str(small_run / "small.txt")]
    assert cli.main(cfg + ["optimize", "--checkpoint-mall", str(out / "checkpoints/mall"), "--in",
                           str(out / "discretized.csv"), "--sidecar", str(out / "sidecar.csv"), "--iterations", "2",
                           "--at", "100", "--out", str(tmp_path / "opt")]) == 0
    assert json.loads((tmp_path / "opt/policy.json").read_text())["history_end"] == 100
    assert cli.main(cfg + ["evaluate", "--checkpoints", str(out / "checkpoints/mt-classical"), "--in",
                           str(out / "discretized.csv"), "--sidecar", str(out / "sidecar.csv"), "--out",
                           str(tmp_path / "ev.json")]) == 0
    assert (tmp_path / "ev.csv").is_file()


def run_cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "bfopt.cli", *args], capture_output=True, text=True, env=env)


def test_errors_are_one_json_line(tmp_path):
    res = run_cli("preprocess", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "d.csv"),
                  "--sidecar", str(tmp_path / "s.csv"))
    assert res.returncode == 1
    lines = res.stderr.strip().splitlines()
    assert len(lines) == 1
    err = json.loads(lines[0])
    assert err["command"] == "preprocess" and err["error"] == "FileNotFoundError"


def test_unknown_config_key_rejected(tmp_path):
    (tmp_path / "bad.txt").write_text("plant.n_chanels = 3\n")
    assert cli.main(["--config", str(tmp_path / "bad.txt"), "generate", "--out", str(tmp_path / "p.csv")]) == 1


def test_seed_precedence(monkeypatch, tmp_path):
    (tmp_path / "c.txt").write_text("seed = 3\n")
    assert cli.load_run_config(str(tmp_path / "c.txt"), None).plant.seed == 3
    monkeypatch.setenv("BFOPT_SEED", "8")
    cfg = cli.load_run_config(str(tmp_path / "c.txt"), None)
    assert (cfg.seed, cfg.plant.seed, cfg.train.seed, cfg.optim.seed) == (8, 8, 8, 8)
    assert cli.load_run_config(str(tmp_path / "c.txt"), 11).seed == 11


def test_generate_minutes_flag(tmp_path):
    assert cli.main(["--seed", "1", "generate", "--minutes", "200", "--out", str(tmp_path / "p.csv")]) == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 201
    # shorter than the PCI delay: nothing useful to learn
    assert cli.main(["--seed", "1", "generate", "--minutes", "30", "--out", str(tmp_path / "q.csv")]) == 1
