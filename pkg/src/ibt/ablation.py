"""Ablation grid: module removal, k sweep, and within-module option removal.

The grid mirrors the published ablation tables: four module-combination rows
(local branch only, no position encoding, transformer only, full model), a
neighbor-count sweep, and one row per removable option. Cells run
independently with seeds derived from the base seed and the cell name;
failed cells are recorded and the grid continues.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .config import RunConfig
from .runner import train_and_eval

MODULE_ROWS = [
    ("A", {"use_transformer": False}),
    ("B", {"use_position_encoding": False}),
    ("C", {"use_position_encoding": False, "use_pooling": False,
           "use_channel_gate_w": False}),
    ("D", {}),
]

K_SWEEP = (10, 20, 40, 60)

OPTION_ROWS = [
    ("Feature Pooling", "w/o maxpooling", {"use_max_pool": False}),
    ("Feature Pooling", "w/o attention pooling", {"use_attention_pool": False}),
    ("Locality Aware Transformer", "w/o weight W", {"use_channel_gate_w": False}),
    ("Locality Aware Transformer", "w/o Position Embedding",
     {"use_position_embedding": False}),
]

# the single-option ablations the trend experiment compares against the full model
SINGLE_BRANCH_ABLATIONS = {name: changes for _, name, changes in OPTION_ROWS}


def cell_seed(base_seed: int, cell_name: str) -> int:
    return zlib.crc32(f"{base_seed}:{cell_name}".encode("utf-8"))


@dataclass
class CellResult:
    name: str
    overall_accuracy: float | None = None
    mean_class_accuracy: float | None = None
    instance_miou: float | None = None
    error: str | None = None


def _run_cell(cfg: RunConfig, name: str, changes: dict, k: int | None = None) -> CellResult:
    try:
        cell_cfg = replace(cfg, **changes)
        if k is not None:
            cell_cfg = replace(cell_cfg, k=k)
        _, _, report = train_and_eval(cell_cfg, seed=cell_seed(cfg.seed, name))
        return CellResult(name,
                          overall_accuracy=report.overall_accuracy,
                          mean_class_accuracy=report.mean_class_accuracy,
                          instance_miou=report.instance_miou)
    except Exception as exc:  # a broken cell must not sink the grid
        return CellResult(name, error=f"{type(exc).__name__}: {exc}")


def grid_cells(cfg: RunConfig) -> list[tuple[str, dict, int | None]]:
    cells: list[tuple[str, dict, int | None]] = []
    for row, changes in MODULE_ROWS:
        cells.append((f"module_{row}", changes, None))
    for k in K_SWEEP:
        cells.append((f"k_{k}", {}, k))
    for _, name, changes in OPTION_ROWS:
        cells.append((name, changes, None))
    return cells


def run_grid(cfg: RunConfig, workers: int = 1) -> list[CellResult]:
    cells = grid_cells(cfg)
    if workers <= 1:
        return [_run_cell(cfg, name, changes, k) for name, changes, k in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_cell, cfg, name, changes, k)
                   for name, changes, k in cells]
        return [f.result() for f in futures]


def _fmt(value: float | None) -> str:
    return "failed" if value is None else f"{100.0 * value:.1f}"


def format_table(cfg: RunConfig, results: list[CellResult]) -> str:
    by_name = {r.name: r for r in results}
    if cfg.task == "classification":
        cols, headers = (("mean_class_accuracy", "overall_accuracy"), ("mAcc", "OA"))
    else:
        cols, headers = (("instance_miou", "overall_accuracy"), ("mIoU", "point acc"))

    def metric_cells(name: str) -> str:
        r = by_name[name]
        if r.error is not None:
            return f" FAILED ({r.error}) | |"
        return " " + " | ".join(_fmt(getattr(r, c)) for c in cols) + " |"

    check = "yes"
    lines = ["# Ablation results", "", "## Modules", "",
             f"| Model | Position | Pooling | Transformer | {headers[0]} | {headers[1]} |",
             "|---|---|---|---|---|---|"]
    flags = {"A": (check, check, ""), "B": ("", check, check),
             "C": ("", "", check), "D": (check, check, check)}
    for row, _ in MODULE_ROWS:
        p, f, t = flags[row]
        lines.append(f"| {row} | {p} | {f} | {t} |" + metric_cells(f"module_{row}"))
    lines += ["", "## Options within modules", "",
              f"| Module | Option | {headers[0]} | {headers[1]} |",
              "|---|---|---|---|"]
    for k in K_SWEEP:
        lines.append(f"| Relative Position Encoding | k={k} |" + metric_cells(f"k_{k}"))
    for module, name, _ in OPTION_ROWS:
        lines.append(f"| {module} | {name} |" + metric_cells(name))
    return "\n".join(lines) + "\n"


def ablation_trend(cfg: RunConfig, repeats: int = 10) -> dict[str, int]:
    """Count repetitions where the full model's test accuracy is >= each
    single-option ablation's. Every repetition reseeds data and init."""
    metric = "overall_accuracy" if cfg.task == "classification" else "instance_miou"
    wins = {name: 0 for name in SINGLE_BRANCH_ABLATIONS}
    for rep in range(repeats):
        rep_cfg = replace(cfg, seed=cell_seed(cfg.seed, f"rep{rep}") % (2 ** 31))
        _, _, full = train_and_eval(rep_cfg, seed=cell_seed(rep_cfg.seed, "full"))
        full_acc = getattr(full, metric)
        for name, changes in SINGLE_BRANCH_ABLATIONS.items():
            _, _, ablated = train_and_eval(replace(rep_cfg, **changes),
                                           seed=cell_seed(rep_cfg.seed, name))
            if full_acc >= getattr(ablated, metric):
                wins[name] += 1
    return wins
