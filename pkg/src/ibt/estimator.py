"""Scikit-learn style estimators wrapping the networks.

``X`` is a list (or array) of point clouds, each an (N, 3) float array; all
clouds in one call must share N. The estimators follow the usual sklearn
conventions (constructor stores hyperparameters untouched, ``fit`` returns
self, ``get_params``/``set_params``/``clone`` work), so they compose with
pipelines and model-selection utilities that can index a list of clouds.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import Dataset, normalize_cloud
from .errors import DataError
from .geometry import PointCloud
from .layers import AblationSwitches
from .model import IbtClassifier, IbtConfig, IbtSegmenter
from .trainer import (predict_classification, predict_segmentation,
                      shape_iou, train)


def validate_point_clouds(X) -> list[np.ndarray]:
    """Check every cloud is a finite (N, 3) array with one shared N."""
    clouds = []
    for i, cloud in enumerate(X):
        arr = np.asarray(cloud, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise DataError(f"cloud {i}: expected (N, 3) coordinates, got {list(arr.shape)}")
        if not np.isfinite(arr).all():
            raise DataError(f"cloud {i}: non-finite coordinate")
        clouds.append(arr)
    if not clouds:
        raise DataError("no clouds given")
    if len({c.shape[0] for c in clouds}) != 1:
        raise DataError("all clouds in one call must have the same point count")
    return clouds


class PointCloudClassifier(ClassifierMixin, BaseEstimator):
    """Shape-category classifier over raw (N, 3) point clouds."""

    def __init__(self, k=16, embed_dim=64, num_ibt_layers=3, global_dim=256,
                 epochs=60, batch_size=8, lr=0.01, momentum=0.9,
                 dropout=0.5, normalize=True, seed=0):
        self.k = k
        self.embed_dim = embed_dim
        self.num_ibt_layers = num_ibt_layers
        self.global_dim = global_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.dropout = dropout
        self.normalize = normalize
        self.seed = seed

    def _dataset(self, X, y=None) -> Dataset:
        clouds = validate_point_clouds(X)
        if y is None:
            labels = np.zeros(len(clouds), dtype=np.int64)
        else:
            labels = np.searchsorted(self.classes_, np.asarray(y))
        pcs = [PointCloud(c, category=int(label), name=f"cloud_{i}")
               for i, (c, label) in enumerate(zip(clouds, labels))]
        if self.normalize:
            pcs = [normalize_cloud(p) for p in pcs]
        return Dataset(pcs, class_names=[str(c) for c in self.classes_])

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        config = IbtConfig(embed_dim=self.embed_dim, k=self.k,
                           num_ibt_layers=self.num_ibt_layers,
                           num_classes=len(self.classes_),
                           global_dim=self.global_dim, dropout=self.dropout)
        self.model_ = IbtClassifier(config, seed=self.seed)
        train(self.model_, self._dataset(X, y), epochs=self.epochs,
              batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
              seed=self.seed)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit this classifier before calling predict")
        preds = predict_classification(self.model_, self._dataset(X),
                                       batch_size=self.batch_size)
        return self.classes_[preds]


class PointPartSegmenter(BaseEstimator):
    """Per-point part labeler; ``y`` is a list of per-point label arrays."""

    def __init__(self, k=16, embed_dim=64, num_ibt_layers=3, global_dim=256,
                 category_embed_dim=64, epochs=60, batch_size=8, lr=0.01,
                 momentum=0.9, dropout=0.5, normalize=True, seed=0):
        self.k = k
        self.embed_dim = embed_dim
        self.num_ibt_layers = num_ibt_layers
        self.global_dim = global_dim
        self.category_embed_dim = category_embed_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.dropout = dropout
        self.normalize = normalize
        self.seed = seed

    def _dataset(self, X, y=None, categories=None) -> Dataset:
        clouds = validate_point_clouds(X)
        if categories is None:
            categories = np.zeros(len(clouds), dtype=np.int64)
        pcs = []
        for i, c in enumerate(clouds):
            labels = np.asarray(y[i], dtype=np.int64) if y is not None else None
            pcs.append(PointCloud(c, point_labels=labels,
                                  category=int(categories[i]), name=f"cloud_{i}"))
        if self.normalize:
            pcs = [normalize_cloud(p) for p in pcs]
        names = [str(c) for c in range(int(np.max(categories)) + 1)]
        return Dataset(pcs, class_names=names,
                       task="part_segmentation" if y is not None else "classification",
                       part_ranges=getattr(self, "part_ranges_", None))

    def fit(self, X, y, categories=None):
        clouds = validate_point_clouds(X)
        if len(y) != len(clouds):
            raise DataError("need one label array per cloud")
        if categories is None:
            categories = np.zeros(len(clouds), dtype=np.int64)
        categories = np.asarray(categories, dtype=np.int64)
        num_categories = int(categories.max()) + 1

        # part ranges per category, from the labels seen in fit
        self.part_ranges_ = {}
        for c in range(num_categories):
            seen = np.concatenate([np.asarray(y[i]) for i in range(len(clouds))
                                   if categories[i] == c] or [np.array([0])])
            self.part_ranges_[c] = range(int(seen.min()), int(seen.max()) + 1)
        num_parts = max(r.stop for r in self.part_ranges_.values())

        config = IbtConfig(embed_dim=self.embed_dim, k=self.k,
                           num_ibt_layers=self.num_ibt_layers,
                           num_parts=num_parts, num_categories=num_categories,
                           category_embed_dim=self.category_embed_dim,
                           global_dim=self.global_dim, dropout=self.dropout)
        self.model_ = IbtSegmenter(config, seed=self.seed)
        dataset = self._dataset(X, y, categories)
        dataset.part_ranges = self.part_ranges_
        train(self.model_, dataset, epochs=self.epochs, batch_size=self.batch_size,
              lr=self.lr, momentum=self.momentum, seed=self.seed)
        return self

    def predict(self, X, categories=None):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit this segmenter before calling predict")
        dataset = self._dataset(X, categories=categories)
        return predict_segmentation(self.model_, dataset, batch_size=self.batch_size)

    def score(self, X, y, categories=None):
        """Mean per-shape IoU."""
        if categories is None:
            categories = np.zeros(len(list(X)), dtype=np.int64)
        preds = self.predict(X, categories)
        ious = [shape_iou(np.asarray(y[i]), preds[i], self.part_ranges_[int(categories[i])])
                for i in range(len(preds))]
        return float(np.mean(ious))
