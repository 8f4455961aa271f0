"""Command-line entry point: train, eval, ablate, gradcheck, export.

Every command is deterministic given its config and seed. A training run
writes all artifacts (resolved config, checkpoints, metrics.json, loss.csv)
under one directory, so the run is reproducible from that directory alone.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .ablation import format_table, run_grid
from .checkpoint import load_checkpoint
from .config import RunConfig, coerce, load_config
from .data import load_cloud, normalize_cloud, write_colored_ply
from .errors import (CheckpointError, ConfigError, ContractError, DataError,
                     DomainError, NumericError, ParseError, TrainingError)
from .model import build_graphs, category_onehot
from .runner import evaluate, make_dataset, make_model, train_and_eval
from .trainer import MetricsReport

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="key=value config file")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=str, default=None,
                            metavar=f.type.upper() if f.type in ("int", "float", "bool") else "VALUE",
                            help=f"override config key {f.name}")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = coerce(f.name, raw)
    return load_config(args.config, overrides).resolved()


def _run_dir(cfg: RunConfig) -> Path:
    name = cfg.run_name or f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.task}-seed{cfg.seed}"
    path = Path(cfg.out_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_metrics(path: Path, cfg: RunConfig, train_report: MetricsReport,
                   test_report: MetricsReport) -> None:
    payload = {
        "task": cfg.task,
        "seed": cfg.seed,
        "train": train_report.to_dict(),
        "test": test_report.to_dict(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_loss_csv(path: Path, report: MetricsReport) -> None:
    lines = ["epoch,step,loss"]
    lines += [f"{e},{s},{l!r}" for e, s, l in report.loss_history]
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    run_dir = _run_dir(cfg)
    (run_dir / "config.cfg").write_text(cfg.to_text())
    model, train_report, test_report = train_and_eval(cfg, run_dir=run_dir)
    _write_metrics(run_dir / "metrics.json", cfg, train_report, test_report)
    _write_loss_csv(run_dir / "loss.csv", train_report)
    print(f"run directory: {run_dir}")
    _print_metrics(cfg.task, test_report)
    return EXIT_OK


def _print_metrics(task: str, report: MetricsReport) -> None:
    if task == "classification":
        print(f"{'mAcc':>8} {'OA':>8}")
        print(f"{100 * report.mean_class_accuracy:>8.1f} {100 * report.overall_accuracy:>8.1f}")
    else:
        names = list(report.per_class_iou or {})
        header = f"{'mIoU':>8}" + "".join(f" {n[:10]:>10}" for n in names)
        values = f"{100 * report.instance_miou:>8.1f}" + "".join(
            f" {100 * report.per_class_iou[n]:>10.1f}" for n in names)
        print(header)
        print(values)


def _load_run(checkpoint: str, config_override: str | None):
    ckpt_path = Path(checkpoint)
    cfg_path = Path(config_override) if config_override else ckpt_path.parent / "config.cfg"
    if not cfg_path.is_file():
        raise ConfigError(f"no config found at {cfg_path}; pass --run-config")
    cfg = load_config(cfg_path).resolved()
    model = make_model(cfg)
    model.load_state_arrays(load_checkpoint(ckpt_path))
    model.eval()
    return cfg, model


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, model = _load_run(args.checkpoint, args.run_config)
    dataset = make_dataset(cfg, args.split)
    report = evaluate(model, dataset, batch_size=cfg.batch_size)
    _print_metrics(cfg.task, report)
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    run_dir = _run_dir(cfg)
    (run_dir / "config.cfg").write_text(cfg.to_text())
    results = run_grid(cfg, workers=args.workers)
    table = format_table(cfg, results)
    (run_dir / "table.md").write_text(table)
    (run_dir / "cells.json").write_text(
        json.dumps([vars(r) for r in results], indent=2, sort_keys=True) + "\n")
    print(table)
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.scope == "model":
        reports = {"model": gc.check_model(tol=args.tol, seed=args.seed)}
    elif args.scope == "layer":
        reports = gc.check_layers(tol=args.tol, seed=args.seed)
    else:
        reports = gc.check_ops(tol=args.tol, seed=args.seed)
    all_ok = True
    for name, report in reports.items():
        print(f"== {name}")
        print(report.format_table())
        all_ok &= report.passed
    if args.json:
        payload = {name: r.to_dict() for name, r in reports.items()}
        Path(args.json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all_ok else EXIT_GRADCHECK


def cmd_export(args: argparse.Namespace) -> int:
    cfg, model = _load_run(args.checkpoint, args.run_config)
    if cfg.task != "part_segmentation":
        raise ConfigError(f"export needs a part_segmentation checkpoint, got task '{cfg.task}'")
    cloud = load_cloud(args.input)
    if cfg.normalize:
        cloud = normalize_cloud(cloud)
    coords = cloud.coords[None]
    graphs = build_graphs(coords, cfg.k)
    onehot = category_onehot(np.array([args.category]), cfg.num_categories)
    logits = model(coords, onehot, graphs=graphs)
    labels = np.argmax(logits.data[0], axis=-1)
    write_colored_ply(cloud, labels, args.output)
    print(f"wrote {cloud.num_points} colored points to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ibt", description="Point-cloud classification and part segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    _add_config_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--run-config", default=None,
                        help="config file (default: config.cfg next to the checkpoint)")
    p_eval.add_argument("--split", default="test", choices=("train", "test"))
    p_eval.add_argument("--json", default=None, help="also write metrics JSON here")
    p_eval.set_defaults(fn=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the ablation grid")
    _add_config_flags(p_ablate)
    p_ablate.add_argument("--workers", type=int, default=1)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p_gc.add_argument("--scope", default="model", choices=("op", "layer", "model"))
    p_gc.add_argument("--tol", type=float, default=gc.DEFAULT_TOL)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--json", default=None, help="write the report JSON here")
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_export = sub.add_parser("export", help="segment a cloud file and write a colored PLY")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--run-config", default=None)
    p_export.add_argument("--input", required=True, help=".xyz or .off point cloud")
    p_export.add_argument("--output", required=True, help="output .ply path")
    p_export.add_argument("--category", type=int, default=0)
    p_export.set_defaults(fn=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError, ParseError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericError, ContractError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
