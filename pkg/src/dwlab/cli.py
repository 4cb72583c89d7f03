"""Command-line entry point: ``dwlab run | ablate | export-embeddings``.

Log verbosity is read from ``DWLAB_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .experiment import (EXIT_CONFIG, EXIT_OK, ConfigError, ExperimentConfig, build_dataset,
                         derived_seeds, export_embeddings, load_config, run_ablation, run_safely,
                         write_error)
from .data import IdxFormatError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dwlab", description="Dynamic weighted domain adaptation lab")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one model")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, value parsed as JSON when possible")

    ab = sub.add_parser("ablate", help="run a grid of configs over several seeds")
    ab.add_argument("--config", required=True)
    ab.add_argument("--grid", required=True, help="JSON file mapping axis -> list of values")
    ab.add_argument("--seeds", type=int, default=3)
    ab.add_argument("--out")
    ab.add_argument("--workers", type=int, default=1)
    ab.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    ex = sub.add_parser("export-embeddings", help="dump generator features as CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True,
                    help="config file whose dataset section (and seed) defines the data")
    ex.add_argument("--out", default="embeddings.csv")
    return p


def _overrides(args) -> list[str]:
    ov = list(args.override)
    if getattr(args, "seed", None) is not None:
        ov.append(f"seed={args.seed}")
    return ov


def _config_or_error(args, out_hint: str | None) -> ExperimentConfig | int:
    try:
        return load_config(args.config, _overrides(args))
    except ConfigError as exc:
        write_error(out_hint or ".", "config", EXIT_CONFIG, str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def cmd_run(args) -> int:
    cfg = _config_or_error(args, args.out)
    if isinstance(cfg, int):
        return cfg
    code, summary = run_safely(cfg, args.out)
    if code == EXIT_OK:
        print(json.dumps({k: summary[k] for k in
                          ("final_target_accuracy", "best_target_accuracy", "final_tau")}))
    else:
        print(f"run failed: {summary['message']}", file=sys.stderr)
    return code


def cmd_ablate(args) -> int:
    cfg = _config_or_error(args, args.out)
    if isinstance(cfg, int):
        return cfg
    out = args.out or cfg.output_dir
    try:
        grid = json.loads(Path(args.grid).read_text())
        if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
            raise ConfigError("grid must map each axis to a list of values")
        table = run_ablation(cfg, grid, args.seeds, out, args.workers)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        write_error(out, "config", EXIT_CONFIG, str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for row in table:
        print(json.dumps(row))
    return EXIT_OK


def cmd_export(args) -> int:
    out_dir = Path(args.out).parent
    try:
        cfg = load_config(args.data)
        data = build_dataset(cfg.dataset, derived_seeds(cfg.seed)["data"])
        path = export_embeddings(args.checkpoint, data, args.out)
    except (ConfigError, IdxFormatError, OSError, ValueError) as exc:
        write_error(out_dir, "config", EXIT_CONFIG, str(exc))
        print(f"export failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DWLAB_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    handler = {"run": cmd_run, "ablate": cmd_ablate, "export-embeddings": cmd_export}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
