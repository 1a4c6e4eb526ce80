"""Residual graph-convolution upsampler.

The network turns an n-point cloud into a 2^stages * n point cloud: a
feature net encodes centered neighbor offsets, then each stage runs a
residual graph-convolution block on the current cloud's kNN graph and an
unpooling head that emits two coordinate offsets per point. Offsets are
added to the source point, so a zero-initialized head reproduces exact
point duplication and training starts from that baseline. Neighbor graphs
are rebuilt from the new coordinates after every unpooling; neighbor
indices are constants as far as gradients are concerned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .geometry import knn_indices, knn_query, _as_points


@dataclass
class GraphConvLayer:
    """One graph convolution: self weight w0, neighbor-sum weight w1, optional bias."""

    w0: Parameter
    w1: Parameter
    bias: Optional[Parameter] = None

    def parameters(self):
        params = [self.w0, self.w1]
        if self.bias is not None:
            params.append(self.bias)
        return params


@dataclass
class FeatureNetConfig:
    k: int = 8
    channels: int = 128
    depth: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.channels < 1 or self.k < 1:
            raise ValueError("feature net needs depth >= 1, channels >= 1, k >= 1")


@dataclass
class ResidualBlockConfig:
    k: int = 8
    channels: int = 128
    residual_layers: int = 12

    def __post_init__(self):
        if self.k < 1 or self.channels < 1 or self.residual_layers < 1:
            raise ValueError("residual block configuration must be positive")


@dataclass
class GeneratorConfig:
    """Architecture of the upsampler; ratio per stage is fixed at 2x."""

    stages: int = 2
    feature_net: FeatureNetConfig = field(default_factory=FeatureNetConfig)
    block: ResidualBlockConfig = field(default_factory=ResidualBlockConfig)
    use_bias: bool = True

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one upsampling stage")

    @property
    def ratio(self) -> int:
        return 2 ** self.stages

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "feature_net": vars(self.feature_net).copy(),
            "block": vars(self.block).copy(),
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(
            stages=d["stages"],
            feature_net=FeatureNetConfig(**d["feature_net"]),
            block=ResidualBlockConfig(**d["block"]),
            use_bias=d["use_bias"],
        )


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, scale: float = 1.0) -> np.ndarray:
    """Fan-scaled uniform init; ``shape`` defaults to (fan_in, fan_out)."""
    bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


def residual_gconv_init(rng, c_in: int, c_out: int, k: int, depth: int):
    """Weight pair for one graph convolution inside a depth-layer residual stack.

    The neighbor weight feeds on the sum of k spatially correlated rows, so
    its effective fan-in is k^2 * c_in; both weights are additionally
    scaled by 1/depth so the whole relu-residual stack keeps unit-order
    feature magnitudes at any configured depth (there is no normalization
    layer to absorb drift).
    """
    w0 = glorot_uniform(rng, c_in, c_out, scale=1.0 / depth)
    w1 = glorot_uniform(rng, k * k * c_in, c_out, shape=(c_in, c_out), scale=1.0 / depth)
    return w0, w1


def _as_tensor(cloud) -> Tensor:
    if isinstance(cloud, Tensor):
        return cloud
    return ad.constant(_as_points(cloud))


def gconv(features: Tensor, nbrs, layer: GraphConvLayer) -> Tensor:
    """w0-weighted self feature plus w1-weighted neighbor sum (bias folded into the self map)."""
    self_part = ad.linear(features, layer.w0, layer.bias)
    nbr_part = ad.linear(ad.neighbor_sum(features, nbrs), layer.w1)
    return ad.add(self_part, nbr_part)


def feature_net(cloud, layers, k: int) -> Tensor:
    """Encode each point from its k centered neighbor offsets.

    Neighbor offsets P - p run through the shared point-wise affine+relu
    stack row by row, then an element-wise max over the k rows produces one
    feature vector per point. Because only offsets enter the network the
    result is exactly translation-invariant.
    """
    x_t = _as_tensor(cloud)
    n = x_t.data.shape[0]
    if n <= k:
        raise ValueError(f"feature net needs more than k={k} points, got {n}")
    nbrs = knn_indices(x_t.data, k)
    centers = np.repeat(np.arange(n), k)
    offsets = ad.subtract(ad.take_rows(x_t, nbrs.indices.ravel()), ad.take_rows(x_t, centers))
    h = offsets
    for weight, bias in layers:
        h = ad.relu(ad.linear(h, weight, bias))
    groups = np.arange(n * k).reshape(n, k)
    return ad.neighbor_max(h, groups)


def residual_block(cloud, features: Tensor, layers, k: int) -> Tensor:
    """Apply layered residual graph convolutions on one fixed kNN graph.

    The graph is built once from the cloud coordinates; every layer adds
    relu(gconv(f)) onto f. Coordinates pass through unchanged (the caller
    keeps its cloud).
    """
    x_t = _as_tensor(cloud)
    nbrs = knn_indices(x_t.data, k)
    f = features
    for layer in layers:
        f = ad.add(f, ad.relu(gconv(f, nbrs, layer)))
    return f


def unpool(cloud, features: Tensor, head: GraphConvLayer, k: int):
    """Double the point count: each point spawns two offset copies of itself.

    The head graph convolution maps features to 6 values per point,
    reshaped to two 3-vectors delta; output point 2i+j is x[i] + delta[i][j].
    Output features are the mean of the k nearest input points' features,
    queried in the input cloud.
    """
    x_t = _as_tensor(cloud)
    n = x_t.data.shape[0]
    nbrs = knn_indices(x_t.data, k)
    delta = ad.reshape(gconv(features, nbrs, head), (2 * n, 3))
    duplicated = ad.take_rows(x_t, np.repeat(np.arange(n), 2))
    x_out = ad.add(duplicated, delta)
    propagation = knn_query(x_out.data, x_t.data, k)
    f_out = ad.neighbor_mean(features, propagation)
    return x_out, f_out


@dataclass
class _Stage:
    block_layers: list
    head: GraphConvLayer


class GeneratorModel:
    """Parameter container plus the forward pass of the upsampler.

    Per-stage parameters are independent; unpool heads start at zero so the
    untrained network performs exact duplication.
    """

    def __init__(self, config: GeneratorConfig, rng):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.config = config
        self._params: list[Parameter] = []
        fcfg = config.feature_net
        bcfg = config.block

        self.feature_layers = []
        width_in = 3
        for i in range(fcfg.depth):
            w = self._add(f"feature.{i}.w", glorot_uniform(rng, width_in, fcfg.channels))
            b = self._add(f"feature.{i}.b", np.zeros(fcfg.channels)) if config.use_bias else None
            self.feature_layers.append((w, b))
            width_in = fcfg.channels
        if fcfg.channels != bcfg.channels:
            raise ValueError("feature net and residual block widths must match")

        self.stages = []
        c = bcfg.channels
        for s in range(config.stages):
            layers = []
            for i in range(bcfg.residual_layers):
                layers.append(self._gconv_layer(f"stage{s}.res{i}", c, c, rng))
            head = self._gconv_layer(f"stage{s}.head", c, 6, rng=None)  # zero init
            self.stages.append(_Stage(layers, head))

    def _add(self, name: str, data) -> Parameter:
        p = Parameter(name, data)
        self._params.append(p)
        return p

    def _gconv_layer(self, prefix: str, c_in: int, c_out: int, rng) -> GraphConvLayer:
        if rng is None:
            w0 = self._add(f"{prefix}.w0", np.zeros((c_in, c_out)))
            w1 = self._add(f"{prefix}.w1", np.zeros((c_in, c_out)))
        else:
            bcfg = self.config.block
            init_w0, init_w1 = residual_gconv_init(
                rng, c_in, c_out, bcfg.k, bcfg.residual_layers
            )
            w0 = self._add(f"{prefix}.w0", init_w0)
            w1 = self._add(f"{prefix}.w1", init_w1)
        bias = self._add(f"{prefix}.bias", np.zeros(c_out)) if self.config.use_bias else None
        return GraphConvLayer(w0, w1, bias)

    def parameters(self) -> list:
        return list(self._params)

    def named_parameters(self) -> dict:
        return {p.name: p for p in self._params}

    def generate(self, cloud) -> Tensor:
        """Full forward pass; returns the (2^stages * n, 3) output as a graph node."""
        x_t = _as_tensor(cloud)
        fcfg = self.config.feature_net
        f = feature_net(x_t, self.feature_layers, fcfg.k)
        for stage in self.stages:
            f = residual_block(x_t, f, stage.block_layers, self.config.block.k)
            x_t, f = unpool(x_t, f, stage.head, self.config.block.k)
        return x_t

    def upsample(self, points) -> np.ndarray:
        """Convenience wrapper returning plain coordinates."""
        return self.generate(points).data


def generate(cloud, model: GeneratorModel) -> Tensor:
    return model.generate(cloud)
