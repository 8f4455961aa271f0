"""Point clouds and the k-nearest-neighbor graph they induce.

Neighborhoods are built once per cloud in coordinate space (coordinates do
not change between layers) and include the center point itself as neighbor 0.
All searches are exact brute force: at a thousand points the O(N^2) distance
table is cheap, and exactness keeps the test oracles simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError


@dataclass
class PointCloud:
    """N x 3 coordinates plus optional per-point part labels and a category id."""

    coords: np.ndarray
    point_labels: np.ndarray | None = None
    category: int | None = None
    name: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.coords.shape[0] < 1:
            raise DataError(f"point cloud '{self.name}': coords must be N x 3 with N >= 1, "
                            f"got {list(self.coords.shape)}")
        if not np.isfinite(self.coords).all():
            raise DataError(f"point cloud '{self.name}': non-finite coordinate")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if self.point_labels.shape != (self.coords.shape[0],):
                raise DataError(f"point cloud '{self.name}': labels must have length N")

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]


@dataclass
class NeighborGraph:
    """Per-point index table of the k nearest neighbors, self-loop first.

    Row i lists i itself, then the remaining k-1 neighbors by ascending
    distance, ties broken by ascending index.
    """

    indices: np.ndarray
    k: int = field(init=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.k = self.indices.shape[1]


def knn_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    """Exact k-nearest-neighbor table over Euclidean distance.

    Deterministic under coincident points: distance ties sort by index.
    """
    n = cloud.num_points
    if not 1 <= k <= n:
        raise DomainError(f"knn_graph: k={k} outside [1, {n}]")
    coords = cloud.coords
    if np.isnan(coords).any():
        raise DataError("knn_graph: NaN coordinate")
    diffs = coords[:, None, :] - coords[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
    np.fill_diagonal(d2, -1.0)  # forces the self-loop to sort first
    order = np.argsort(d2, axis=1, kind="stable")  # stable = index tie-break
    return NeighborGraph(order[:, :k])


def relative_geometry(cloud: PointCloud, graph: NeighborGraph) -> tuple[np.ndarray, np.ndarray]:
    """Center-minus-neighbor offsets and their Euclidean lengths.

    Returns ``deltas`` of shape [N, K, 3] with ``deltas[i, j] = x_i - x_{idx[i, j]}``
    and ``dists`` of shape [N, K, 1].
    """
    coords = cloud.coords
    deltas = coords[:, None, :] - coords[graph.indices]
    dists = np.sqrt(np.einsum("ijk,ijk->ij", deltas, deltas))[:, :, None]
    return deltas, dists


def sample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniformly sample ``n`` points; without replacement when the cloud is
    large enough, with replacement otherwise. Labels ride along."""
    if n <= 0:
        raise DomainError(f"sample_points: n={n} must be positive")
    rng = np.random.default_rng(seed)
    replace = cloud.num_points < n
    idx = rng.choice(cloud.num_points, size=n, replace=replace)
    labels = cloud.point_labels[idx] if cloud.point_labels is not None else None
    return PointCloud(cloud.coords[idx], point_labels=labels,
                      category=cloud.category, name=cloud.name)
