"""Training objectives: one-sided Chamfer and the least-squares adversarial pair.

The coverage loss sums, over ground-truth points, the squared distance to
the nearest predicted point; the reverse direction exists for metrics but
is deliberately excluded from training (it rewards collapsing onto the
input and produces duplicate points). Adversarial terms regress
discriminator scores to 1 (generator) and to 0/1 (discriminator) in the
least-squares form. Score reductions use the mean so values are invariant
to the retained-point count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import _as_points, nearest_indices

_REDUCTIONS = ("sum", "mean")


@dataclass
class LossConfig:
    chamfer_weight: float = 100.0  # balance between coverage and adversarial terms
    chamfer_reduction: str = "mean"

    def __post_init__(self):
        if self.chamfer_weight <= 0:
            raise ValueError("chamfer_weight must be positive")
        if self.chamfer_reduction not in _REDUCTIONS:
            raise ValueError(f"chamfer_reduction must be one of {_REDUCTIONS}")


def _cloud_tensor(cloud) -> Tensor:
    if isinstance(cloud, Tensor):
        if cloud.data.ndim != 2 or cloud.data.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) cloud tensor, got {cloud.data.shape}")
        if cloud.data.shape[0] < 1:
            raise ValueError("empty point cloud")
        return cloud
    return ad.constant(_as_points(cloud))


def chamfer_one_sided(gt, pred, reduction: str = "mean") -> Tensor:
    """Per ground-truth point, squared distance to its nearest prediction.

    Reduced by sum, or by mean over the ground-truth count. Differentiable
    with respect to the predictions; each ground-truth point sends gradient
    only to its selected nearest prediction (ties: smallest index).
    """
    if reduction not in _REDUCTIONS:
        raise ValueError(f"reduction must be one of {_REDUCTIONS}")
    gt_pts = _as_points(gt)
    if gt_pts.shape[0] < 1:
        raise ValueError("empty point cloud")
    pred_t = _cloud_tensor(pred)
    nn = nearest_indices(gt_pts, pred_t.data)
    matched = ad.take_rows(pred_t, nn)
    sq = ad.square(ad.subtract(matched, ad.constant(gt_pts)))
    total = ad.reduce_sum(sq)
    if reduction == "sum":
        return total
    return ad.multiply_scalar(total, 1.0 / gt_pts.shape[0])


def chamfer_reverse(gt, pred, reduction: str = "mean") -> Tensor:
    """Mirror direction: per prediction, squared distance to the nearest ground-truth point."""
    if reduction not in _REDUCTIONS:
        raise ValueError(f"reduction must be one of {_REDUCTIONS}")
    gt_pts = _as_points(gt)
    if gt_pts.shape[0] < 1:
        raise ValueError("empty point cloud")
    pred_t = _cloud_tensor(pred)
    nn = nearest_indices(pred_t.data, gt_pts)
    sq = ad.square(ad.subtract(pred_t, ad.constant(gt_pts[nn])))
    total = ad.reduce_sum(sq)
    if reduction == "sum":
        return total
    return ad.multiply_scalar(total, 1.0 / pred_t.data.shape[0])


def _scores_tensor(scores) -> Tensor:
    t = scores if isinstance(scores, Tensor) else ad.constant(np.asarray(scores, dtype=np.float64))
    if t.data.size < 1:
        raise ValueError("empty score vector")
    return t


def generator_adv_loss(scores) -> Tensor:
    """Mean squared deviation of the scores from the real target 1."""
    s = _scores_tensor(scores)
    ones = ad.constant(np.ones_like(s.data))
    return ad.reduce_mean(ad.square(ad.subtract(ones, s)))


def discriminator_loss(fake_scores, real_scores) -> Tensor:
    """Half the mean squared fake score plus half the mean squared (1 - real score)."""
    f = _scores_tensor(fake_scores)
    r = _scores_tensor(real_scores)
    fake_term = ad.reduce_mean(ad.square(f))
    ones = ad.constant(np.ones_like(r.data))
    real_term = ad.reduce_mean(ad.square(ad.subtract(ones, r)))
    return ad.add(ad.multiply_scalar(fake_term, 0.5), ad.multiply_scalar(real_term, 0.5))


def joint_loss(gt, pred, scores, cfg: LossConfig) -> Tensor:
    """Weighted coverage term plus the adversarial term."""
    cd = chamfer_one_sided(gt, pred, cfg.chamfer_reduction)
    return ad.add(ad.multiply_scalar(cd, cfg.chamfer_weight), generator_adv_loss(scores))
