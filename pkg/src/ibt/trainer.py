"""Loss, optimizer, training loop, and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .checkpoint import save_checkpoint
from .data import Dataset
from .errors import (ContractError, DataError, DomainError, NumericError,
                     TrainingError)
from .model import (IbtClassifier, IbtSegmenter, build_graphs,
                    category_onehot, set_dropout_rng)


@dataclass
class MetricsReport:
    overall_accuracy: float | None = None
    mean_class_accuracy: float | None = None
    per_class_iou: dict[str, float] | None = None
    category_miou: float | None = None
    instance_miou: float | None = None
    loss_history: list[tuple[int, int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "mean_class_accuracy": self.mean_class_accuracy,
            "per_class_iou": self.per_class_iou,
            "category_miou": self.category_miou,
            "instance_miou": self.instance_miou,
            "loss_history": [[e, s, l] for e, s, l in self.loss_history],
        }


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over every leading axis of ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    num_classes = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DataError(f"targets shape {list(targets.shape)} does not match "
                        f"logits {list(logits.shape)}")
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise DataError(f"target outside [0, {num_classes})")
    flat = ad.reshape(logits, (-1, num_classes))
    n = flat.shape[0]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), targets.ravel()] = 1.0
    ll = ad.log_softmax(flat, axis=-1)
    return ad.scale(ad.reduce_sum(ad.mul(ll, Tensor(onehot))), -1.0 / n)


class SgdMomentum:
    """Classical heavy-ball SGD: v <- mu*v + g; theta <- theta - lr*v."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                raise ContractError(f"sgd_step: parameter '{p.name}' has no gradient")
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                           num_classes: int) -> tuple[float, float]:
    """(overall accuracy, mean per-class accuracy); empty classes excluded."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise DomainError("no samples to score")
    oa = float((y_true == y_pred).mean())
    per_class = []
    for c in range(num_classes):
        mask = y_true == c
        if mask.any():
            per_class.append(float((y_pred[mask] == c).mean()))
    return oa, float(np.mean(per_class))


def shape_iou(labels_true: np.ndarray, labels_pred: np.ndarray,
              parts: range) -> float:
    """Mean IoU over one shape's category part range; empty unions count 1."""
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if labels_true.size and not all(p in parts for p in np.unique(labels_true)):
        raise DataError(f"ground-truth label outside category part range {parts}")
    ious = []
    for part in parts:
        gt = labels_true == part
        pred = labels_pred == part
        union = int((gt | pred).sum())
        inter = int((gt & pred).sum())
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def _batches(num: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(num) if order is None else order
    for start in range(0, num, batch_size):
        yield idx[start:start + batch_size]


def _stack_dataset(dataset: Dataset):
    ns = {c.num_points for c in dataset.clouds}
    if len(ns) != 1:
        raise DataError(f"clouds must share a point count for batching, got {sorted(ns)}")
    coords = np.stack([c.coords for c in dataset.clouds])
    categories = np.array([c.category if c.category is not None else 0
                           for c in dataset.clouds], dtype=np.int64)
    labels = None
    if dataset.task == "part_segmentation":
        labels = np.stack([c.point_labels for c in dataset.clouds])
    return coords, categories, labels


def _forward(model: Module, coords: np.ndarray, categories: np.ndarray,
             graphs: np.ndarray) -> Tensor:
    if isinstance(model, IbtSegmenter):
        onehot = category_onehot(categories, model.config.num_categories)
        return model(coords, onehot, graphs=graphs)
    return model(coords, graphs=graphs)


def _targets(model: Module, categories: np.ndarray, labels: np.ndarray | None):
    return labels if isinstance(model, IbtSegmenter) else categories


def train(model: IbtClassifier | IbtSegmenter, dataset: Dataset, *,
          epochs: int, batch_size: int, lr: float, momentum: float = 0.9,
          seed: int = 0, out_dir: str | Path | None = None,
          early_stop_acc: float = 0.0) -> tuple[Module, MetricsReport]:
    """Seeded SGD training; returns the model and its loss history.

    Writes ``checkpoint.ckpt`` (final) and ``checkpoint_best.ckpt`` (lowest
    epoch mean loss) into ``out_dir`` when given. A non-finite loss aborts
    with the failing epoch/batch. ``early_stop_acc > 0`` stops once the
    running train accuracy of an epoch reaches that value.
    """
    if (model.task == "classification") != (dataset.task == "classification"):
        raise DataError(f"model task '{model.task}' does not match dataset task '{dataset.task}'")
    report = MetricsReport()
    if epochs == 0:
        if out_dir is not None:
            _save(model, Path(out_dir) / "checkpoint.ckpt")
            _save(model, Path(out_dir) / "checkpoint_best.ckpt")
        return model, report

    coords, categories, labels = _stack_dataset(dataset)
    graphs = build_graphs(coords, model.config.k)
    rng = np.random.default_rng([seed, 0xB41C])
    set_dropout_rng(model, np.random.default_rng([seed, 0xD120]))
    optimizer = SgdMomentum(model.parameters(), lr=lr, momentum=momentum)
    num = coords.shape[0]

    best_loss = np.inf
    best_state = None
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(num)
        epoch_losses = []
        correct = 0
        for bi, batch in enumerate(_batches(num, batch_size, order)):
            optimizer.zero_grad()
            try:
                logits = _forward(model, coords[batch], categories[batch], graphs[batch])
                target = _targets(model, categories[batch],
                                  labels[batch] if labels is not None else None)
                loss = cross_entropy(logits, target)
            except NumericError as exc:
                raise TrainingError(f"diverged: {exc}", epoch=epoch, batch=bi)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError("non-finite loss", epoch=epoch, batch=bi)
            ad.backward(loss)
            optimizer.step()
            report.loss_history.append((epoch, bi, value))
            epoch_losses.append(value)
            correct += int((np.argmax(logits.data, axis=-1) == target).sum())
        mean_loss = float(np.mean(epoch_losses))
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        total = num * (1 if model.task == "classification" else coords.shape[1])
        if early_stop_acc > 0.0 and correct / total >= early_stop_acc:
            break
    model.eval()

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _save(model, out / "checkpoint.ckpt")
        save_checkpoint(out / "checkpoint_best.ckpt",
                        best_state if best_state is not None else model.state_arrays())
    return model, report


def _save(model: Module, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, model.state_arrays())


def predict_classification(model: IbtClassifier, dataset: Dataset,
                           batch_size: int = 8) -> np.ndarray:
    coords, categories, _ = _stack_dataset(dataset)
    graphs = build_graphs(coords, model.config.k)
    model.eval()
    preds = []
    for batch in _batches(coords.shape[0], batch_size):
        logits = model(coords[batch], graphs=graphs[batch])
        preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds)


def predict_segmentation(model: IbtSegmenter, dataset: Dataset,
                         batch_size: int = 8) -> np.ndarray:
    coords, categories, _ = _stack_dataset(dataset)
    graphs = build_graphs(coords, model.config.k)
    model.eval()
    preds = []
    for batch in _batches(coords.shape[0], batch_size):
        onehot = category_onehot(categories[batch], model.config.num_categories)
        logits = model(coords[batch], onehot, graphs=graphs[batch])
        preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds)


def evaluate_classification(model: IbtClassifier, dataset: Dataset,
                            batch_size: int = 8) -> MetricsReport:
    if len(dataset) == 0:
        raise DomainError("evaluate_classification: empty dataset")
    preds = predict_classification(model, dataset, batch_size)
    truth = np.array([c.category for c in dataset.clouds])
    oa, macc = classification_metrics(truth, preds, len(dataset.class_names))
    return MetricsReport(overall_accuracy=oa, mean_class_accuracy=macc)


def evaluate_segmentation(model: IbtSegmenter, dataset: Dataset,
                          batch_size: int = 8) -> MetricsReport:
    if len(dataset) == 0:
        raise DomainError("evaluate_segmentation: empty dataset")
    if dataset.part_ranges is None:
        raise DataError("evaluate_segmentation: dataset has no per-category part ranges")
    preds = predict_segmentation(model, dataset, batch_size)
    by_category: dict[int, list[float]] = {}
    shape_ious = []
    point_correct = 0
    point_total = 0
    for cloud, pred in zip(dataset.clouds, preds):
        iou = shape_iou(cloud.point_labels, pred, dataset.part_ranges[cloud.category])
        shape_ious.append(iou)
        by_category.setdefault(cloud.category, []).append(iou)
        point_correct += int((pred == cloud.point_labels).sum())
        point_total += cloud.num_points
    per_class = {dataset.class_names[c]: float(np.mean(v))
                 for c, v in sorted(by_category.items())}
    return MetricsReport(
        overall_accuracy=point_correct / point_total,
        per_class_iou=per_class,
        category_miou=float(np.mean(list(per_class.values()))),
        instance_miou=float(np.mean(shape_ious)))
