"""Geometric evaluation suite: symmetric Chamfer, EMD, F-score, uniformity, deviation.

All measurements are pure numpy and non-differentiable. Two of them stand
in for mesh-based quantities and are labeled accordingly: the uniformity
coefficient integrates over Euclidean balls with a density-estimated
surface area instead of geodesic disks, and deviation measures nearest
distance to a dense reference sample instead of a mesh. Neither should be
compared against mesh-exact published numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assignment import auction, hungarian
from .geometry import (
    _as_points,
    _iter_row_chunks,
    farthest_point_sample,
    nearest_distances,
    squared_distances,
)

DEFAULT_P_LEVELS = (0.002, 0.004, 0.006, 0.008, 0.010)
EMD_EXACT_LIMIT = 512
EMD_SIZE_LIMIT = 4096


@dataclass
class MetricReport:
    """One evaluation row; ``nuc`` maps each area fraction p to its value.

    ``emd`` is None when the clouds' sizes differ (the metric is undefined);
    ``emd_epsilon`` is the mean-distance optimality bound of the approximate
    solver, 0 for the exact solver.
    """

    cd: float
    emd: Optional[float]
    emd_epsilon: float
    fscore: float
    nuc: dict = field(default_factory=dict)
    deviation_mean: Optional[float] = None
    deviation_std: Optional[float] = None


def _nearest_sq(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    out = np.empty(query.shape[0], dtype=np.float64)
    for lo, hi in _iter_row_chunks(query.shape[0]):
        out[lo:hi] = squared_distances(query[lo:hi], reference).min(axis=1)
    return out


def cd_metric(a, b) -> float:
    """Symmetric Chamfer distance: both one-sided mean squared nearest distances."""
    pa = _as_points(a)
    pb = _as_points(b)
    if pa.shape[0] < 1 or pb.shape[0] < 1:
        raise ValueError("empty point cloud")
    return float(_nearest_sq(pa, pb).mean() + _nearest_sq(pb, pa).mean())


def emd_details(a, b, exact_limit: int = EMD_EXACT_LIMIT):
    """EMD value plus solver provenance: (value, epsilon_bound, exact_flag).

    Minimum over bijections of the mean point-pair Euclidean distance,
    solved exactly up to ``exact_limit`` points and by epsilon-scaling
    auction above; the reported epsilon bounds the mean-distance gap to
    the optimum.
    """
    pa = _as_points(a)
    pb = _as_points(b)
    if pa.shape[0] != pb.shape[0]:
        raise ValueError(f"EMD needs equal sizes, got {pa.shape[0]} vs {pb.shape[0]}")
    n = pa.shape[0]
    if n > EMD_SIZE_LIMIT:
        raise ValueError(f"EMD supports up to {EMD_SIZE_LIMIT} points, got {n}")
    dist = np.sqrt(np.maximum(squared_distances(pa, pb), 0.0))
    if n <= exact_limit:
        col = hungarian(dist)
        eps = 0.0
        exact = True
    else:
        eps = max(1e-12, 1e-3 * float(dist.min(axis=1).mean()))
        col = auction(dist, eps)
        exact = False
    value = float(dist[np.arange(n), col].mean())
    return value, eps, exact


def emd_metric(a, b) -> float:
    """Minimum mean matched Euclidean distance between equal-size clouds."""
    value, _, _ = emd_details(a, b)
    return value


def fscore(gt, pred, tau: float) -> float:
    """Harmonic mean of precision and recall at distance threshold tau.

    Precision: fraction of predictions with a ground-truth point within tau.
    Recall: fraction of ground-truth points with a prediction within tau.
    Defined as 0 when both are 0.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    gt_pts = _as_points(gt)
    pred_pts = _as_points(pred)
    if gt_pts.shape[0] < 1 or pred_pts.shape[0] < 1:
        raise ValueError("empty point cloud")
    precision = float((nearest_distances(pred_pts, gt_pts) <= tau).mean())
    recall = float((nearest_distances(gt_pts, pred_pts) <= tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def estimate_surface_area(reference, k: int = 8, max_samples: int = 2000) -> float:
    """Surface area implied by a dense uniform sample's local point density.

    For a uniform density rho the expected disk area out to the k-th
    neighbor is k / rho, so |ref| * pi * r_k^2 / k estimates the total
    area; the estimate is averaged over a deterministic subsample.
    """
    ref = _as_points(reference)
    n = ref.shape[0]
    if n <= k:
        raise ValueError("reference cloud too small for area estimation")
    take = min(n, max_samples)
    sample_idx = np.unique(np.linspace(0, n - 1, take).astype(np.int64))
    rk_sq = np.empty(sample_idx.shape[0])
    for lo, hi in _iter_row_chunks(sample_idx.shape[0]):
        d = squared_distances(ref[sample_idx[lo:hi]], ref)
        d[np.arange(hi - lo), sample_idx[lo:hi]] = np.inf
        rk_sq[lo:hi] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return float(n * np.pi * rk_sq.mean() / k)


def uniformity_nuc(cloud, reference, p_levels=DEFAULT_P_LEVELS, num_disks: int = 24) -> np.ndarray:
    """Dispersion of normalized point counts in equal-area test disks (Euclidean approximation).

    Disk centers are FPS-selected on the dense reference; for each area
    fraction p the disk radius is sqrt(p * A / pi) with A the estimated
    reference surface area, and the value is the standard deviation over
    centers of count / (|cloud| * p).
    """
    pts = _as_points(cloud)
    ref = _as_points(reference)
    if ref.shape[0] < 10 * pts.shape[0]:
        raise ValueError(
            f"reference too sparse: need >= 10x the cloud size, got {ref.shape[0]} vs {pts.shape[0]}"
        )
    if num_disks < 1 or num_disks > ref.shape[0]:
        raise ValueError("num_disks must be in [1, |reference|]")
    area = estimate_surface_area(ref)
    centers = ref[farthest_point_sample(ref, num_disks, seed_index=0).indices]
    d_sq = squared_distances(centers, pts)  # (disks, n)
    out = np.empty(len(p_levels))
    for i, p in enumerate(p_levels):
        radius_sq = p * area / np.pi
        counts = (d_sq <= radius_sq).sum(axis=1)
        out[i] = float(np.std(counts / (pts.shape[0] * p)))
    return out


def deviation(cloud, dense_reference):
    """Mean and population std of each point's distance to the nearest reference point."""
    pts = _as_points(cloud)
    ref = _as_points(dense_reference)
    if pts.shape[0] < 1 or ref.shape[0] < 1:
        raise ValueError("empty point cloud")
    d = nearest_distances(pts, ref)
    return float(d.mean()), float(d.std())


def evaluate(pred, gt, reference=None, tau: float = 0.01,
             p_levels=DEFAULT_P_LEVELS, num_disks: int = 24) -> MetricReport:
    """Full metric row for a prediction against its ground truth.

    EMD is skipped (None) when the sizes differ; uniformity and deviation
    require a dense reference and are left out of the report without one.
    """
    pred_pts = _as_points(pred)
    gt_pts = _as_points(gt)
    cd = cd_metric(pred_pts, gt_pts)
    if pred_pts.shape[0] == gt_pts.shape[0] and pred_pts.shape[0] <= EMD_SIZE_LIMIT:
        emd, eps, _ = emd_details(pred_pts, gt_pts)
    else:
        emd, eps = None, 0.0
    f = fscore(gt_pts, pred_pts, tau)
    report = MetricReport(cd=cd, emd=emd, emd_epsilon=eps, fscore=f)
    if reference is not None:
        ref_pts = _as_points(reference)
        report.nuc = {
            p: v for p, v in zip(p_levels, uniformity_nuc(pred_pts, ref_pts, p_levels, num_disks))
        }
        mean, std = deviation(pred_pts, ref_pts)
        report.deviation_mean = mean
        report.deviation_std = std
    return report
