"""KNN graph against a brute-force oracle, plus geometric invariants."""

import numpy as np
import pytest

from ibt.errors import DataError, DomainError
from ibt.geometry import (NeighborGraph, PointCloud, knn_graph,
                          relative_geometry, sample_points)


def knn_oracle(coords: np.ndarray, k: int) -> np.ndarray:
    """Full pairwise-distance sort per row: self first, then (distance, index)."""
    n = coords.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d = [float(np.sqrt(((coords[i] - coords[j]) ** 2).sum())) for j in range(n)]
        others = sorted((j for j in range(n) if j != i), key=lambda j: (d[j], j))
        out[i] = [i] + others[:k - 1]
    return out


def distinct_cloud(n: int, seed: int) -> PointCloud:
    """Random cloud with all pairwise distances distinct (holds a.s.)."""
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((n, 3))
    d = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
    iu = np.triu_indices(n, k=1)
    assert len(np.unique(d[iu])) == len(iu[0])
    return PointCloud(coords)


class TestPointCloud:
    def test_rejects_empty(self):
        with pytest.raises(DataError):
            PointCloud(np.zeros((0, 3)))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            PointCloud([[0.0, 0.0, np.inf]])

    def test_rejects_bad_label_length(self):
        with pytest.raises(DataError):
            PointCloud(np.zeros((3, 3)), point_labels=[0, 1])


class TestKnnGraph:
    def test_k1_is_self_loop_only(self):
        cloud = distinct_cloud(10, seed=0)
        graph = knn_graph(cloud, 1)
        assert np.array_equal(graph.indices, np.arange(10)[:, None])

    def test_matches_bruteforce_oracle(self):
        cloud = distinct_cloud(64, seed=1)
        graph = knn_graph(cloud, 8)
        assert np.array_equal(graph.indices, knn_oracle(cloud.coords, 8))

    @pytest.mark.parametrize("n,k,seed", [(5, 5, 2), (33, 4, 3), (100, 16, 4)])
    def test_oracle_various_sizes(self, n, k, seed):
        cloud = distinct_cloud(n, seed=seed)
        assert np.array_equal(knn_graph(cloud, k).indices, knn_oracle(cloud.coords, k))

    def test_self_loop_first_and_distances_nondecreasing(self):
        cloud = distinct_cloud(50, seed=5)
        graph = knn_graph(cloud, 12)
        assert np.array_equal(graph.indices[:, 0], np.arange(50))
        _, dists = relative_geometry(cloud, graph)
        row_d = dists[:, :, 0]
        assert (np.diff(row_d, axis=1) >= 0).all()

    def test_duplicate_points_tie_break_by_index(self):
        coords = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        graph = knn_graph(PointCloud(coords), 3)
        # point 2 coincides with point 1: self first, then the lower index
        assert graph.indices[2].tolist() == [2, 1, 0]
        assert graph.indices[1].tolist() == [1, 2, 0]

    def test_k_out_of_range(self):
        cloud = distinct_cloud(5, seed=6)
        with pytest.raises(DomainError):
            knn_graph(cloud, 6)
        with pytest.raises(DomainError):
            knn_graph(cloud, 0)

    def test_nan_coordinate_is_data_error(self):
        cloud = distinct_cloud(4, seed=7)
        cloud.coords[1, 2] = np.nan  # bypasses construction-time validation
        with pytest.raises(DataError):
            knn_graph(cloud, 2)

    def test_permutation_consistency(self):
        cloud = distinct_cloud(40, seed=8)
        k = 7
        graph = knn_graph(cloud, k)
        rng = np.random.default_rng(9)
        perm = rng.permutation(40)
        permuted = knn_graph(PointCloud(cloud.coords[perm]), k)
        # row for original point perm[i] sits at row i, entries relabeled
        inverse = np.argsort(perm)
        assert np.array_equal(permuted.indices, inverse[graph.indices[perm]])


class TestRelativeGeometry:
    def test_self_loop_entry_is_zero(self):
        cloud = distinct_cloud(12, seed=10)
        graph = knn_graph(cloud, 4)
        deltas, dists = relative_geometry(cloud, graph)
        assert np.array_equal(deltas[:, 0, :], np.zeros((12, 3)))
        assert np.array_equal(dists[:, 0, 0], np.zeros(12))

    def test_translation_leaves_deltas_unchanged(self):
        # quantized grid keeps float addition exact, so equality is bitwise
        rng = np.random.default_rng(11)
        coords = np.round(rng.standard_normal((20, 3)) * 2 ** 16) / 2 ** 16
        cloud = PointCloud(coords)
        graph = knn_graph(cloud, 5)
        deltas, dists = relative_geometry(cloud, graph)
        t = np.round(rng.uniform(-8, 8, 3) * 2 ** 16) / 2 ** 16
        deltas2, dists2 = relative_geometry(PointCloud(coords + t), graph)
        assert np.array_equal(deltas, deltas2)
        assert np.array_equal(dists, dists2)

    def test_dists_match_scalar_oracle(self):
        cloud = distinct_cloud(15, seed=12)
        graph = knn_graph(cloud, 6)
        _, dists = relative_geometry(cloud, graph)
        for i in range(15):
            for j in range(6):
                diff = cloud.coords[i] - cloud.coords[graph.indices[i, j]]
                expected = float(np.sqrt(diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2))
                assert abs(dists[i, j, 0] - expected) <= 1e-12


class TestSamplePoints:
    def test_full_sample_is_permutation(self):
        cloud = distinct_cloud(30, seed=13)
        sampled = sample_points(cloud, 30, seed=0)
        assert sorted(map(tuple, sampled.coords)) == sorted(map(tuple, cloud.coords))

    def test_seeded_determinism(self):
        cloud = distinct_cloud(50, seed=14)
        a = sample_points(cloud, 20, seed=3)
        b = sample_points(cloud, 20, seed=3)
        assert np.array_equal(a.coords, b.coords)

    def test_oversampling_uses_replacement(self):
        cloud = distinct_cloud(5, seed=15)
        sampled = sample_points(cloud, 12, seed=1)
        assert sampled.num_points == 12

    def test_zero_rejected(self):
        with pytest.raises(DomainError):
            sample_points(distinct_cloud(5, seed=16), 0, seed=0)

    def test_labels_ride_along(self):
        coords = np.arange(15.0).reshape(5, 3)
        cloud = PointCloud(coords, point_labels=np.arange(5), category=2)
        sampled = sample_points(cloud, 3, seed=4)
        for coord, label in zip(sampled.coords, sampled.point_labels):
            assert label == coord[0] // 3
        assert sampled.category == 2


def test_neighbor_graph_k_field():
    g = NeighborGraph(np.zeros((4, 3), dtype=np.int64))
    assert g.k == 3
