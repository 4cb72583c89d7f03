import json

import pytest

TINY = {
    "dataset": {"kind": "two_moons", "params": {"n_source": 40, "n_target": 40}},
    "model": {"feature_dim": 16, "hidden_dim": 16},
    "train": {"epochs": 3, "warmup_epochs": 1, "batch_size": 16,
              "optimizer": {"lr": 0.001}},
    "seed": 0,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
