"""Train DWL on rotated two-moons and compare with source-only training."""

import sys
from pathlib import Path

from dwlab.experiment import load_config, read_metrics, run_experiment

config = Path(__file__).resolve().parent.parent / "configs" / "two_moons.json"
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
out = Path("runs/demo")

dwl = run_experiment(load_config(config, {"train.epochs": epochs}), out / "dwl")
base = run_experiment(load_config(config, {"train.epochs": epochs,
                                           "train.warmup_epochs": epochs}), out / "source_only")
print(f"target accuracy: DWL {dwl['final_target_accuracy']:.3f}, "
      f"source-only {base['final_target_accuracy']:.3f}")

print("epoch   tau    mmd     J      target acc")
for row in read_metrics(out / "dwl" / "metrics.csv")[::max(1, epochs // 12)]:
    print(f"{row['epoch']:5d} {row['tau']:.3f} {row['mmd_raw']:.4f} {row['j_raw']:7.2f} "
          f"{row['target_accuracy']:.3f}")
