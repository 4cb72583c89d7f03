"""Experiment configuration, single runs, ablation grids and embedding export.

Output files of :func:`run_experiment` (all in ``output_dir``):

``metrics.csv``
    one row per epoch, columns :data:`METRICS_COLUMNS`; undefined values
    (normalized estimators before the balance state has two distinct
    observations, target accuracy without labels) are empty cells.
``timing.csv``
    ``epoch,wall_time_seconds``; kept apart so ``metrics.csv`` is
    byte-reproducible.
``checkpoint.npz``
    see :func:`dwlab.nn.save_checkpoint`.
``summary.json``
    final/best target accuracy, final tau, weighting coefficients, config echo.
``error.json``
    written instead of a summary when a run fails.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import DomainDataset, load_idx, make_two_moons_shift
from .dwl import EpochMetrics, OptimizerSpec, TrainConfig, Trainer, TrainingDivergence
from .nn import init_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

METRICS_COLUMNS = [c for c in EpochMetrics.columns() if c != "wall_time_seconds"]

GENERATOR_HEADS = ("l2", "linear", "tanh", "relu")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    """``kind`` is ``two_moons``, ``idx`` or ``csv``; ``params`` are passed to its loader."""

    kind: str = "two_moons"
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class ModelSpec:
    feature_dim: int = 16
    hidden_dim: int = 64
    dropout: float = 0.0
    generator_head: str = "l2"


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            train_raw = dict(raw.get("train", {}))
            opt = OptimizerSpec(**train_raw.pop("optimizer", {}))
            cfg = cls(
                dataset=DatasetSpec(**raw.get("dataset", {})),
                model=ModelSpec(**raw.get("model", {})),
                train=TrainConfig(optimizer=opt, **train_raw),
                seed=int(raw.get("seed", 0)),
                output_dir=str(raw.get("output_dir", "runs/default")),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.dataset.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        for key in ("source_images", "source_labels", "target_images", "target_labels", "path"):
            p = self.dataset.params.get(key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"dataset.params.{key}: {p} does not exist")
        if self.model.feature_dim < 1 or self.model.hidden_dim < 1:
            raise ConfigError("model dims must be >= 1")
        if self.model.generator_head not in GENERATOR_HEADS:
            raise ConfigError(f"model.generator_head must be one of {GENERATOR_HEADS}")
        if not 0.0 <= self.model.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.model.dropout}")
        if self.train.optimizer.kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.train.optimizer.kind!r}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: dict[str, Any] | list[str]) -> dict:
    """Set dotted keys (``train.epochs``) in a nested config dict.

    ``overrides`` is a mapping or a list of ``key=value`` strings whose
    values are parsed as JSON when possible.
    """
    raw = copy.deepcopy(raw)
    if isinstance(overrides, list):
        pairs = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            pairs[k.strip()] = _parse_value(v)
        overrides = pairs
    for key, value in overrides.items():
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = value
    return raw


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return ExperimentConfig.from_dict(raw)


# -- datasets -------------------------------------------------------------------

def _load_csv_dataset(path, num_classes: int | None = None) -> DomainDataset:
    src_x, src_y, tgt_x, tgt_y = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            feats = [float(v) for k, v in row.items() if k not in ("domain", "label")]
            label = row["label"]
            if row["domain"] == "source":
                src_x.append(feats)
                src_y.append(int(label))
            else:
                tgt_x.append(feats)
                tgt_y.append(int(label) if label != "" else -1)
    k = num_classes or (max(src_y) + 1)
    has_tgt = all(y >= 0 for y in tgt_y)
    return DomainDataset(np.array(src_x), np.array(src_y), np.array(tgt_x), k,
                         target_y=np.array(tgt_y) if has_tgt else None)


def _load_idx_dataset(params: dict) -> DomainDataset:
    max_count = params.get("max_count")
    xs, ys = load_idx(params["source_images"], params["source_labels"], max_count)
    xt, yt = load_idx(params["target_images"], params["target_labels"],
                      params.get("target_max_count", max_count))
    if xs.shape[1] != xt.shape[1]:
        raise ConfigError(f"source/target image sizes differ: {xs.shape[1]} vs {xt.shape[1]}")
    return DomainDataset(xs, ys, xt, int(params.get("num_classes", 10)), target_y=yt)


DATASET_KINDS = ("two_moons", "idx", "csv")


def build_dataset(spec: DatasetSpec, seed: int) -> DomainDataset:
    if spec.kind == "two_moons":
        return make_two_moons_shift(seed=seed, **spec.params)
    if spec.kind == "idx":
        return _load_idx_dataset(spec.params)
    if spec.kind == "csv":
        return _load_csv_dataset(spec.params["path"], spec.params.get("num_classes"))
    raise ConfigError(f"unknown dataset kind {spec.kind!r}")


def derived_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds for data, model init and training streams."""
    children = np.random.SeedSequence(seed).spawn(3)
    names = ("data", "model", "train")
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


# -- single run -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(path, rows: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in METRICS_COLUMNS])


def read_metrics(path) -> list[dict[str, float | None]]:
    """Parse ``metrics.csv`` back into dicts, checking the column set and order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        out = []
        for line in reader:
            row = {}
            for k, v in zip(header, line):
                row[k] = None if v == "" else (int(v) if k == "epoch" else float(v))
            out.append(row)
    return out


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, output_dir=None) -> dict:
    """Train one model and write all run artifacts; returns the summary record."""
    config.validate()
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = derived_seeds(config.seed)
    data = build_dataset(config.dataset, seeds["data"])
    model = init_model(data.input_dim, config.model.feature_dim, config.model.hidden_dim,
                       data.num_classes, seed=seeds["model"], dropout=config.model.dropout,
                       generator_head=config.model.generator_head)
    trainer = Trainer(model, data.training_view(), config.train, seed=seeds["train"],
                      target_labels=data.target_y)
    start = time.perf_counter()
    rows: list[EpochMetrics] = []
    try:
        for _ in range(config.train.epochs):
            rows.append(trainer.train_epoch())
    finally:
        write_metrics(out / "metrics.csv", rows)
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "wall_time_seconds"])
            for r in rows:
                w.writerow([r.epoch, f"{r.wall_time_seconds:.6f}"])

    ws, wt = trainer.weights
    save_checkpoint(out / "checkpoint.npz", model,
                    extra={"w_source": ws, "w_target": wt, "seed": config.seed})
    accs = [r.target_accuracy for r in rows]
    has_target = not any(math.isnan(a) for a in accs)
    best = int(np.argmax(accs)) if has_target else None
    summary = {
        "status": "ok",
        "epochs": len(rows),
        "final_target_accuracy": accs[-1] if has_target else None,
        "best_target_accuracy": accs[best] if has_target else None,
        "best_epoch": best,
        "final_source_accuracy": rows[-1].source_accuracy,
        "final_tau": trainer.tau,
        "last_epoch_tau": rows[-1].tau,
        "w_source": ws,
        "w_target": wt,
        "wall_time_seconds": time.perf_counter() - start,
        "config": config.to_dict(),
    }
    _write_json(out / "summary.json", summary)
    return summary


def write_error(output_dir, kind: str, exit_code: int, message: str) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "error.json", {"status": "error", "kind": kind,
                                     "exit_code": exit_code, "message": message})


def run_safely(config: ExperimentConfig, output_dir=None) -> tuple[int, dict]:
    """:func:`run_experiment` mapped onto exit codes, with ``error.json`` on failure."""
    out = output_dir or config.output_dir
    try:
        return EXIT_OK, run_experiment(config, out)
    except ConfigError as exc:
        write_error(out, "config", EXIT_CONFIG, str(exc))
        return EXIT_CONFIG, {"status": "error", "message": str(exc)}
    except TrainingDivergence as exc:
        write_error(out, "divergence", EXIT_DIVERGED, str(exc))
        return EXIT_DIVERGED, {"status": "error", "message": str(exc)}


# -- ablation ---------------------------------------------------------------------

def _cell_label(value) -> str:
    if isinstance(value, dict):
        if "label" in value:
            return str(value["label"])
        return ";".join(f"{k}={json.dumps(v)}" for k, v in value.items())
    return json.dumps(value)


def expand_grid(grid: dict[str, list]) -> list[tuple[dict[str, str], dict[str, Any]]]:
    """Cartesian product of grid axes -> ``(labels, overrides)`` per cell.

    An axis value that is a dict is a set of dotted overrides (an optional
    ``label`` key names it); any other value is assigned to the axis name itself.
    """
    if not grid:
        return [({}, {})]
    axes = list(grid)
    cells = []
    for combo in itertools.product(*(grid[a] for a in axes)):
        labels, overrides = {}, {}
        for axis, value in zip(axes, combo):
            labels[axis] = _cell_label(value)
            if isinstance(value, dict):
                overrides.update({k: v for k, v in value.items() if k != "label"})
            else:
                overrides[axis] = value
        cells.append((labels, overrides))
    return cells


def _ablation_job(args) -> tuple[int, int, float | None, float | None, str | None]:
    cell_idx, seed, raw, out = args
    try:
        cfg = ExperimentConfig.from_dict(raw)
        code, summary = run_safely(cfg, out)
    except ConfigError as exc:
        write_error(out, "config", EXIT_CONFIG, str(exc))
        return cell_idx, seed, None, None, str(exc)
    if code != EXIT_OK:
        return cell_idx, seed, None, None, summary["message"]
    return cell_idx, seed, summary["final_target_accuracy"], summary["final_tau"], None


def run_ablation(base: ExperimentConfig, grid: dict[str, list], seeds: int,
                 output_dir=None, workers: int = 1) -> list[dict]:
    """Run every grid cell over ``seeds`` seeds and write ``ablation.csv``.

    Seeds are ``base.seed + i``.  Failed runs are counted and skipped; the
    remaining cells still run.
    """
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    out = Path(output_dir or base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = expand_grid(grid)
    base_raw = base.to_dict()
    jobs = []
    for ci, (_, overrides) in enumerate(cells):
        raw = apply_overrides(base_raw, overrides)
        for s in range(seeds):
            run_raw = apply_overrides(raw, {"seed": base.seed + s})
            jobs.append((ci, base.seed + s, run_raw, str(out / f"cell{ci:03d}" / f"seed{base.seed + s}")))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_job, jobs))
    else:
        results = [_ablation_job(j) for j in jobs]

    table = []
    for ci, (labels, _) in enumerate(cells):
        mine = [r for r in results if r[0] == ci]
        accs = [r[2] for r in mine if r[4] is None and r[2] is not None]
        taus = [r[3] for r in mine if r[4] is None]
        row = {"cell": ci, **labels, "n_runs": len(mine), "n_failed": sum(r[4] is not None for r in mine),
               "target_acc_mean": float(np.mean(accs)) if accs else None,
               "target_acc_std": float(np.std(accs)) if accs else None,
               "final_tau_mean": float(np.mean(taus)) if taus else None}
        table.append(row)

    columns = ["cell", *grid.keys(), "n_runs", "n_failed", "target_acc_mean",
               "target_acc_std", "final_tau_mean"]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in table:
            w.writerow([_fmt(row.get(c)) for c in columns])
    return table


# -- embeddings -------------------------------------------------------------------

def export_embeddings(checkpoint, dataset: DomainDataset, path) -> Path:
    """Write generator outputs as ``domain,label,feat0..featF-1``.

    Inputs are scaled by the weighting coefficients stored in the checkpoint.
    Target labels are included when the dataset carries them.
    """
    model, meta = load_checkpoint(checkpoint)
    if dataset.input_dim != model.input_dim:
        raise ConfigError(f"checkpoint expects input width {model.input_dim}, "
                          f"dataset has {dataset.input_dim}")
    extra = meta.get("extra", {})
    ws, wt = extra.get("w_source", 1.0), extra.get("w_target", 1.0)
    fs = model.features(dataset.source_x * ws).values
    ft = model.features(dataset.target_x * wt).values
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label"] + [f"feat{i}" for i in range(model.feature_dim)])
        for f, y in zip(fs, dataset.source_y):
            w.writerow(["source", int(y)] + [repr(float(v)) for v in f])
        for i, f in enumerate(ft):
            label = "" if dataset.target_y is None else int(dataset.target_y[i])
            w.writerow(["target", label] + [repr(float(v)) for v in f])
    return path
