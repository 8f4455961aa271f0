"""Shared glue between configs, datasets, models, and the trainer."""

from __future__ import annotations

from pathlib import Path

from .config import RunConfig
from .data import (Dataset, gen_synthetic, load_directory_dataset,
                   normalize_cloud)
from .model import IbtClassifier, IbtSegmenter
from .trainer import (MetricsReport, evaluate_classification,
                      evaluate_segmentation, train)


def make_dataset(cfg: RunConfig, split: str) -> Dataset:
    if cfg.dataset == "synthetic":
        per_class = cfg.train_per_class if split == "train" else cfg.test_per_class
        ds = gen_synthetic(cfg.family_list(), per_class, cfg.num_points,
                           cfg.noise, seed=cfg.seed, task=cfg.task, split=split)
    else:
        ds = load_directory_dataset(cfg.data_dir, split, cfg.num_points, seed=cfg.seed)
    if cfg.normalize:
        ds.clouds = [normalize_cloud(c) for c in ds.clouds]
    return ds


def make_model(cfg: RunConfig, seed: int | None = None):
    model_cls = IbtClassifier if cfg.task == "classification" else IbtSegmenter
    return model_cls(cfg.model_config(), seed=cfg.seed if seed is None else seed)


def evaluate(model, dataset: Dataset, batch_size: int = 8) -> MetricsReport:
    if model.task == "classification":
        return evaluate_classification(model, dataset, batch_size)
    return evaluate_segmentation(model, dataset, batch_size)


def train_and_eval(cfg: RunConfig, run_dir: str | Path | None = None,
                   seed: int | None = None):
    """Train on the train split, evaluate on the test split."""
    seed = cfg.seed if seed is None else seed
    train_set = make_dataset(cfg, "train")
    test_set = make_dataset(cfg, "test")
    model = make_model(cfg, seed=seed)
    model, train_report = train(
        model, train_set, epochs=cfg.epochs, batch_size=cfg.batch_size,
        lr=cfg.lr, momentum=cfg.momentum, seed=seed, out_dir=run_dir,
        early_stop_acc=cfg.early_stop_acc)
    test_report = evaluate(model, test_set, batch_size=cfg.batch_size)
    return model, train_report, test_report
