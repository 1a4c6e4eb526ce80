"""Deterministic geometric kernels shared by the networks, losses and metrics.

Everything here is a pure function over immutable inputs: pairwise distances,
k-nearest-neighbor graph construction, farthest point sampling and index
gathering. Distances are computed by direct coordinate differences (no
norm-expansion trick) so that results agree bit-for-bit with naive
reference implementations, and all ties are broken by the smaller point
index, which makes every kernel deterministic and testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_CHUNK_ROWS = 512  # row block size for pairwise distance computations


def _as_points(cloud) -> np.ndarray:
    """Coerce a PointCloud or (n, 3) array-like to a float64 (n, 3) array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """An ordered list of 3D points.

    Point order is significant and preserved by every operation that does
    not explicitly resample. Coordinates must be finite.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def translated(self, offset) -> "PointCloud":
        return PointCloud(self.points + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True)
class NeighborIndex:
    """Per-point neighbor lists: row i holds the indices of i's neighbors.

    Rows are sorted by nondecreasing distance with ties broken by the
    smaller index. For self-queries the point itself is excluded.
    """

    indices: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError(f"indices must be 2-D (n, k), got shape {idx.shape}")
        if idx.size and idx.min() < 0:
            raise ValueError("neighbor indices must be nonnegative")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def num_queries(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class SampleIndex:
    """Distinct point indices produced by a sampling operation, in selection order."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("sample indices must be 1-D")
        if len(np.unique(idx)) != idx.shape[0]:
            raise ValueError("sample indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]


def squared_distances(a, b) -> np.ndarray:
    """Full |a| x |b| matrix of squared Euclidean distances.

    Computed by direct differences for exact agreement with naive loops.
    Inputs of this size are expected to be modest; use the chunked callers
    below for large clouds.
    """
    pa = _as_points(a)
    pb = _as_points(b)
    diff = pa[:, None, :] - pb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _iter_row_chunks(n: int, chunk: int = _CHUNK_ROWS):
    for start in range(0, n, chunk):
        yield start, min(start + chunk, n)


def knn_indices(cloud, k: int) -> NeighborIndex:
    """k nearest neighbors of every point among the *other* points.

    Rows are sorted by ascending squared distance, ties by smaller index;
    the query point itself is never part of its own row.

    Raises ValueError when k < 1 or k > n - 1.
    """
    pts = _as_points(cloud)
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if k >= n:
        raise ValueError(f"k={k} requires at least k+1 points, cloud has {n}")
    out = np.empty((n, k), dtype=np.int64)
    for lo, hi in _iter_row_chunks(n):
        d = squared_distances(pts[lo:hi], pts)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf  # self-exclusion
        order = np.argsort(d, axis=1, kind="stable")  # stable = ties by index
        out[lo:hi] = order[:, :k]
    return NeighborIndex(out)


def knn_query(query, reference, k: int) -> NeighborIndex:
    """k nearest neighbors of each query point within a reference cloud.

    Unlike knn_indices there is no self-exclusion: coincident points are
    legitimate neighbors. Ties broken by smaller reference index.
    """
    q = _as_points(query)
    r = _as_points(reference)
    if k < 1:
        raise ValueError("k must be positive")
    if k > r.shape[0]:
        raise ValueError(f"k={k} exceeds reference size {r.shape[0]}")
    out = np.empty((q.shape[0], k), dtype=np.int64)
    for lo, hi in _iter_row_chunks(q.shape[0]):
        d = squared_distances(q[lo:hi], r)
        order = np.argsort(d, axis=1, kind="stable")
        out[lo:hi] = order[:, :k]
    return NeighborIndex(out)


def nearest_distances(query, reference) -> np.ndarray:
    """Euclidean distance from each query point to its nearest reference point."""
    q = _as_points(query)
    r = _as_points(reference)
    out = np.empty(q.shape[0], dtype=np.float64)
    for lo, hi in _iter_row_chunks(q.shape[0]):
        d = squared_distances(q[lo:hi], r)
        out[lo:hi] = np.sqrt(d.min(axis=1))
    return out


def nearest_indices(query, reference) -> np.ndarray:
    """Index of the nearest reference point per query point (ties: smaller index)."""
    q = _as_points(query)
    r = _as_points(reference)
    out = np.empty(q.shape[0], dtype=np.int64)
    for lo, hi in _iter_row_chunks(q.shape[0]):
        d = squared_distances(q[lo:hi], r)
        out[lo:hi] = d.argmin(axis=1)
    return out


def farthest_point_sample(cloud, m: int, seed_index: int = 0) -> SampleIndex:
    """Greedy farthest point sampling.

    Starting from seed_index, repeatedly selects the point maximizing the
    minimum distance to the already-selected set; ties go to the smaller
    index. Raises ValueError when m > n or the seed is out of range.
    """
    pts = _as_points(cloud)
    n = pts.shape[0]
    if m < 1:
        raise ValueError("m must be positive")
    if m > n:
        raise ValueError(f"cannot sample m={m} from {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range [0, {n})")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    diff = pts - pts[seed_index]
    min_sq = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))  # argmax returns the first (smallest) index on ties
        selected[i] = nxt
        diff = pts - pts[nxt]
        np.minimum(min_sq, np.einsum("ij,ij->i", diff, diff), out=min_sq)
    return SampleIndex(selected)


def gather(cloud, idx: SampleIndex) -> PointCloud:
    """New cloud of the selected points, in idx order."""
    pts = _as_points(cloud)
    indices = idx.indices if isinstance(idx, SampleIndex) else np.asarray(idx, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= pts.shape[0]):
        raise ValueError("gather index out of range")
    return PointCloud(pts[indices])
