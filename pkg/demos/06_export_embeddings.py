"""Export generator features from a trained checkpoint for external plotting."""

import csv
from pathlib import Path

import numpy as np

from dwlab.experiment import build_dataset, derived_seeds, export_embeddings, load_config, run_experiment

config = load_config(Path(__file__).resolve().parent.parent / "configs" / "two_moons.json",
                     {"train.epochs": 20})
out = Path("runs/demo_export")
run_experiment(config, out)
data = build_dataset(config.dataset, derived_seeds(config.seed)["data"])
path = export_embeddings(out / "checkpoint.npz", data, out / "embeddings.csv")

with open(path) as fh:
    rows = list(csv.reader(fh))
feats = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
domains = np.array([r[0] for r in rows[1:]])
print(f"{path}: {len(rows) - 1} rows x {len(rows[0])} columns")
print("per-domain feature mean distance:",
      np.linalg.norm(feats[domains == "source"].mean(0) - feats[domains == "target"].mean(0)).round(4))
