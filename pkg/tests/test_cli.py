import csv
import json
import subprocess
import sys

from dwlab.cli import main


def test_run_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(tiny_config), "--out", str(out), "--seed", "4",
                 "--override", "train.epochs=2"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert set(printed) == {"final_target_accuracy", "best_target_accuracy", "final_tau"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 4 and summary["epochs"] == 2


def test_config_error_exit_code(tiny_config, tmp_path):
    out = tmp_path / "bad"
    assert main(["run", "--config", str(tiny_config), "--out", str(out),
                 "--override", "train.tau_fixed=3"]) == 2
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_ablate_and_export(tiny_config, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"train.weighting_mode": ["dynamic", "static"]}))
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid), "--seeds", "2",
                 "--out", str(out), "--override", "train.epochs=2"]) == 0
    with open(out / "ablation.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2

    ckpt = out / "cell000" / "seed0" / "checkpoint.npz"
    emb = tmp_path / "emb.csv"
    assert main(["export-embeddings", "--checkpoint", str(ckpt), "--data", str(tiny_config),
                 "--out", str(emb)]) == 0
    with open(emb) as fh:
        assert len(list(csv.reader(fh))) == 81


def test_bad_grid_file(tiny_config, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text('{"train.epochs": 3}')
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid),
                 "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tiny_config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dwlab", "run", "--config", str(tiny_config),
                           "--out", str(tmp_path / "m"), "--override", "train.epochs=1"],
                          capture_output=True, text=True, env={"DWLAB_LOG_LEVEL": "debug",
                                                               "PATH": "/usr/bin:/bin"})
    assert proc.returncode == 0, proc.stderr
    assert "DEBUG" in proc.stderr
