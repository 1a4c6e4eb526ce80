"""Graph patch discriminator: one unbounded score per retained point.

The pipeline mirrors the generator's encoder side: a feature net over
centered neighbor offsets, then alternating residual graph-convolution
blocks and pooling blocks that shrink the cloud with farthest point
sampling while max-pooling features over each retained point's original
neighborhood. Pooling repeats while a full factor-4 step stays above the
retained-point budget; a final partial step trims to exactly that budget.
A last residual block and a zero-initialized graph-convolution head
produce the per-point scores; there is no squashing because the
least-squares adversarial objective regresses scores to 0/1 targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .generator import (
    FeatureNetConfig,
    GraphConvLayer,
    ResidualBlockConfig,
    _as_tensor,
    feature_net,
    gconv,
    glorot_uniform,
    residual_block,
    residual_gconv_init,
)
from .geometry import farthest_point_sample, knn_indices


@dataclass
class PoolBlockConfig:
    factor: int = 4
    k: int = 8

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError("pooling factor must be at least 2")
        if self.k < 1:
            raise ValueError("pooling neighbor count must be positive")


@dataclass
class DiscriminatorConfig:
    feature_net: FeatureNetConfig = field(
        default_factory=lambda: FeatureNetConfig(k=8, channels=64, depth=2)
    )
    block: ResidualBlockConfig = field(
        default_factory=lambda: ResidualBlockConfig(k=8, channels=64, residual_layers=4)
    )
    pool: PoolBlockConfig = field(default_factory=PoolBlockConfig)
    output_points: int = 64
    pool_stages: int = 3  # untied repeat blocks available; bounds the largest input
    use_bias: bool = True
    fps_seed: int = 0

    def __post_init__(self):
        if self.output_points < 1:
            raise ValueError("output_points must be positive")
        if self.pool_stages < 1:
            raise ValueError("need at least one pooling stage")

    def to_dict(self) -> dict:
        return {
            "feature_net": vars(self.feature_net).copy(),
            "block": vars(self.block).copy(),
            "pool": vars(self.pool).copy(),
            "output_points": self.output_points,
            "pool_stages": self.pool_stages,
            "use_bias": self.use_bias,
            "fps_seed": self.fps_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(
            feature_net=FeatureNetConfig(**d["feature_net"]),
            block=ResidualBlockConfig(**d["block"]),
            pool=PoolBlockConfig(**d["pool"]),
            output_points=d["output_points"],
            pool_stages=d["pool_stages"],
            use_bias=d["use_bias"],
            fps_seed=d["fps_seed"],
        )


def pool(cloud, features: Tensor, cfg: PoolBlockConfig, target: Optional[int] = None,
         fps_seed: int = 0):
    """Downsample a cloud with FPS and max-pool features over original neighborhoods.

    Retains ceil(m / factor) points unless an explicit target is given.
    Each retained point's feature is the element-wise max over the features
    of its k nearest neighbors in the cloud *before* downsampling.
    """
    x_t = _as_tensor(cloud)
    m = x_t.data.shape[0]
    if m <= cfg.k:
        raise ValueError(f"pooling needs more than k={cfg.k} points, got {m}")
    count = int(np.ceil(m / cfg.factor)) if target is None else int(target)
    sel = farthest_point_sample(x_t.data, count, seed_index=fps_seed)
    x_out = ad.take_rows(x_t, sel.indices)
    full_nbrs = knn_indices(x_t.data, cfg.k)
    f_out = ad.neighbor_max(features, full_nbrs.indices[sel.indices])
    return x_out, f_out


class DiscriminatorModel:
    """Parameters and forward pass of the patch discriminator."""

    def __init__(self, config: DiscriminatorConfig, rng):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.config = config
        self._params: list[Parameter] = []
        fcfg = config.feature_net
        bcfg = config.block
        if fcfg.channels != bcfg.channels:
            raise ValueError("feature net and block widths must match")

        self.feature_layers = []
        width_in = 3
        for i in range(fcfg.depth):
            w = self._add(f"feature.{i}.w", glorot_uniform(rng, width_in, fcfg.channels))
            b = self._add(f"feature.{i}.b", np.zeros(fcfg.channels)) if config.use_bias else None
            self.feature_layers.append((w, b))
            width_in = fcfg.channels

        c = bcfg.channels
        self.repeat_blocks = [
            self._block(f"pool{s}", c, rng) for s in range(config.pool_stages)
        ]
        self.trim_block = self._block("trim", c, rng)
        self.final_block = self._block("final", c, rng)
        # zero-initialized head: untrained scores are exactly 0
        w0 = self._add("head.w0", np.zeros((c, 1)))
        w1 = self._add("head.w1", np.zeros((c, 1)))
        bias = self._add("head.bias", np.zeros(1)) if config.use_bias else None
        self.head = GraphConvLayer(w0, w1, bias)

    def _add(self, name: str, data) -> Parameter:
        p = Parameter(name, data)
        self._params.append(p)
        return p

    def _block(self, prefix: str, c: int, rng) -> list:
        bcfg = self.config.block
        layers = []
        for i in range(bcfg.residual_layers):
            init_w0, init_w1 = residual_gconv_init(rng, c, c, bcfg.k, bcfg.residual_layers)
            w0 = self._add(f"{prefix}.res{i}.w0", init_w0)
            w1 = self._add(f"{prefix}.res{i}.w1", init_w1)
            bias = self._add(f"{prefix}.res{i}.bias", np.zeros(c)) if self.config.use_bias else None
            layers.append(GraphConvLayer(w0, w1, bias))
        return layers

    def parameters(self) -> list:
        return list(self._params)

    def named_parameters(self) -> dict:
        return {p.name: p for p in self._params}

    def discriminate(self, cloud) -> Tensor:
        """Score a cloud with one scalar per retained point (output_points rows)."""
        cfg = self.config
        x_t = _as_tensor(cloud)
        n = x_t.data.shape[0]
        if n <= cfg.output_points:
            raise ValueError(
                f"discriminator needs more than {cfg.output_points} points, got {n}"
            )
        f = feature_net(x_t, self.feature_layers, cfg.feature_net.k)
        stage = 0
        while int(np.ceil(x_t.data.shape[0] / cfg.pool.factor)) >= cfg.output_points:
            if stage >= len(self.repeat_blocks):
                raise ValueError(
                    f"input of {n} points exceeds the configured pool_stages="
                    f"{cfg.pool_stages}; increase pool_stages"
                )
            f = residual_block(x_t, f, self.repeat_blocks[stage], cfg.block.k)
            x_t, f = pool(x_t, f, cfg.pool, fps_seed=cfg.fps_seed)
            stage += 1
        if x_t.data.shape[0] > cfg.output_points:
            f = residual_block(x_t, f, self.trim_block, cfg.block.k)
            x_t, f = pool(x_t, f, cfg.pool, target=cfg.output_points, fps_seed=cfg.fps_seed)
        f = residual_block(x_t, f, self.final_block, cfg.block.k)
        nbrs = knn_indices(x_t.data, cfg.block.k)
        return gconv(f, nbrs, self.head)


def discriminate(cloud, model: DiscriminatorModel) -> Tensor:
    return model.discriminate(cloud)
