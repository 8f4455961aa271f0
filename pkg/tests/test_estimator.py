"""Scikit-learn conventions: params round-trip, clone, fit/predict/score."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ibt.data import gen_synthetic
from ibt.errors import DataError
from ibt.estimator import (PointCloudClassifier, PointPartSegmenter,
                           validate_point_clouds)


def toy_classification(per_class=3, n=32, seed=0, split="train"):
    ds = gen_synthetic(["sphere", "cube"], per_class, n, noise=0.05,
                       seed=seed, split=split)
    X = [c.coords for c in ds.clouds]
    y = np.array([c.category for c in ds.clouds])
    return X, y


def toy_segmentation(per_class=3, n=32, seed=0, split="train"):
    ds = gen_synthetic(["sphere", "cube"], per_class, n, noise=0.05, seed=seed,
                       task="part_segmentation", split=split)
    X = [c.coords for c in ds.clouds]
    y = [c.point_labels for c in ds.clouds]
    categories = np.array([c.category for c in ds.clouds])
    return X, y, categories


class TestValidation:
    def test_rejects_wrong_shape(self):
        with pytest.raises(DataError):
            validate_point_clouds([np.zeros((4, 2))])

    def test_rejects_nonfinite(self):
        bad = np.zeros((4, 3))
        bad[0, 0] = np.nan
        with pytest.raises(DataError):
            validate_point_clouds([bad])

    def test_rejects_mixed_point_counts(self):
        with pytest.raises(DataError):
            validate_point_clouds([np.zeros((4, 3)), np.zeros((5, 3))])

    def test_rejects_empty_list(self):
        with pytest.raises(DataError):
            validate_point_clouds([])


class TestClassifier:
    def test_sklearn_params_round_trip(self):
        est = PointCloudClassifier(k=8, epochs=3, lr=0.02)
        params = est.get_params()
        assert params["k"] == 8 and params["lr"] == 0.02
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_set_params(self):
        est = PointCloudClassifier().set_params(epochs=1, k=4)
        assert est.epochs == 1 and est.k == 4

    def test_predict_before_fit_raises(self):
        X, _ = toy_classification()
        with pytest.raises(NotFittedError):
            PointCloudClassifier().predict(X)

    def test_fit_predict_score(self):
        X, y = toy_classification(per_class=4)
        est = PointCloudClassifier(k=4, embed_dim=8, global_dim=16,
                                   epochs=80, batch_size=4, lr=0.01, seed=0)
        est.fit(X, y)
        assert est.model_.config.num_classes == 2
        preds = est.predict(X)
        assert set(preds) <= set(y)
        assert est.score(X, y) >= 0.75  # memorize most of a tiny set

    def test_string_labels_supported(self):
        X, y = toy_classification(per_class=2)
        names = np.array(["ball", "box"])[y]
        est = PointCloudClassifier(k=4, embed_dim=8, global_dim=16,
                                   epochs=2, batch_size=4, seed=0).fit(X, names)
        assert set(est.predict(X)) <= {"ball", "box"}


class TestSegmenter:
    def test_fit_predict_shapes(self):
        X, y, categories = toy_segmentation()
        est = PointPartSegmenter(k=4, embed_dim=8, global_dim=16,
                                 epochs=2, batch_size=4, seed=0)
        est.fit(X, y, categories=categories)
        preds = est.predict(X, categories=categories)
        assert preds.shape == (len(X), 32)

    def test_part_ranges_inferred_per_category(self):
        X, y, categories = toy_segmentation()
        est = PointPartSegmenter(k=4, embed_dim=8, global_dim=16,
                                 epochs=1, batch_size=4, seed=0)
        est.fit(X, y, categories=categories)
        assert est.part_ranges_[0] == range(0, 2)   # sphere: 2 parts
        assert est.part_ranges_[1] == range(2, 5)   # cube: 3 parts

    def test_score_is_mean_shape_iou(self):
        X, y, categories = toy_segmentation(per_class=2)
        est = PointPartSegmenter(k=4, embed_dim=8, global_dim=16,
                                 epochs=2, batch_size=4, seed=0)
        est.fit(X, y, categories=categories)
        score = est.score(X, y, categories=categories)
        assert 0.0 <= score <= 1.0

    def test_label_count_mismatch_rejected(self):
        X, y, categories = toy_segmentation()
        with pytest.raises(DataError):
            PointPartSegmenter(epochs=1).fit(X, y[:-1], categories=categories)
