"""Spatio-temporal graph convolution network for the skeleton stream."""

from __future__ import annotations

import numpy as np

from .. import ops
from ..errors import InvalidArgumentError
from ..skeleton import build_spatial_graph
from ..tensor import Tensor, add_channel_bias, node_mix, relu, reshape, transpose
from .base import BatchNorm, Linear, Module, ModelConfig, fan_in_uniform


class GraphConv(Module):
    """Spatial graph convolution ``A_norm X W + b`` applied at every frame.

    Input and output are ``[N, C, T, V]``.
    """

    def __init__(self, in_ch: int, out_ch: int, adjacency: np.ndarray, rng: np.random.Generator):
        super().__init__()
        self.weight = Tensor(fan_in_uniform(rng, (out_ch, in_ch), in_ch), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self._adjacency = np.asarray(adjacency, dtype=np.float64)

    def forward(self, x: Tensor) -> Tensor:
        n, c, t, v = x.shape
        rows = reshape(transpose(x, (0, 2, 3, 1)), (n * t * v, c))
        mixed = ops.linear(rows, self.weight)
        y = transpose(reshape(mixed, (n, t, v, -1)), (0, 3, 1, 2))
        # normalized adjacency is symmetric, so right-multiplying the node axis is A X
        y = node_mix(y, self._adjacency)
        return add_channel_bias(y, self.bias)


class TemporalConv(Module):
    """Convolution along time only, kernel ``(k, 1)`` with zero padding ``k // 2``."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Tensor(fan_in_uniform(rng, (out_ch, in_ch, kernel, 1, 1), in_ch * kernel),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.kernel = kernel
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        n, c, t, v = x.shape
        y = ops.conv3d(reshape(x, (n, c, t, v, 1)), self.weight, self.bias,
                       stride=(self.stride, 1, 1), padding=(self.kernel // 2, 0, 0))
        return reshape(y, y.shape[:4])


class Residual(Module):
    """1x1 projection (with temporal stride) plus batch norm for mismatched shapes."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv = TemporalConv(in_ch, out_ch, 1, stride, rng)
        self.bn = BatchNorm(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))


class STGCNBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, kernel: int, adjacency: np.ndarray,
                 rng: np.random.Generator, residual: bool = True):
        super().__init__()
        self.gcn = GraphConv(in_ch, out_ch, adjacency, rng)
        self.bn1 = BatchNorm(out_ch)
        self.tcn = TemporalConv(out_ch, out_ch, kernel, stride, rng)
        self.bn2 = BatchNorm(out_ch)
        self.residual_mode = "none"
        if residual:
            if in_ch == out_ch and stride == 1:
                self.residual_mode = "identity"
            else:
                self.residual_mode = "project"
                self.residual = Residual(in_ch, out_ch, stride, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = relu(self.bn1(self.gcn(x)))
        y = self.bn2(self.tcn(y))
        if self.residual_mode == "identity":
            y = y + x
        elif self.residual_mode == "project":
            y = y + self.residual(x)
        return relu(y)


class STGCN(Module):
    """Input ``[N, 2, T, V]`` of joint coordinates, output logits ``[N, num_classes]``."""

    def __init__(self, cfg: ModelConfig, adjacency: np.ndarray | None = None):
        super().__init__()
        if adjacency is None:
            adjacency = build_spatial_graph(num_nodes=cfg.num_nodes).normalized
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (cfg.num_nodes, cfg.num_nodes):
            raise InvalidArgumentError(
                f"adjacency must be {cfg.num_nodes}x{cfg.num_nodes}, got {adjacency.shape}")
        if cfg.temporal_kernel < 1 or cfg.temporal_kernel % 2 == 0:
            raise InvalidArgumentError("temporal_kernel must be odd and positive")
        self.cfg = cfg
        self._adjacency = adjacency
        rng = np.random.default_rng(cfg.seed)
        blocks = []
        in_ch = cfg.input_channels
        for i, (out_ch, stride) in enumerate(zip(cfg.stgcn_channels, cfg.stgcn_strides)):
            blocks.append(STGCNBlock(in_ch, out_ch, stride, cfg.temporal_kernel, adjacency, rng,
                                     residual=i > 0))
            in_ch = out_ch
        self.blocks = blocks
        self.head = Linear(in_ch, cfg.num_classes, rng)
        self.min_frames = int(np.prod(cfg.stgcn_strides))

    def check_input(self, x: Tensor) -> None:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.input_channels or x.shape[3] != cfg.num_nodes:
            raise InvalidArgumentError(
                f"expected input [N, {cfg.input_channels}, T, {cfg.num_nodes}], got {list(x.shape)}")
        if x.shape[2] < self.min_frames:
            raise InvalidArgumentError(
                f"T={x.shape[2]} is below the minimum T={self.min_frames} set by the temporal strides")

    def features(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return ops.global_avg_pool(x)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        return self.head(self.features(x))


def build_stgcn(cfg: ModelConfig, adjacency: np.ndarray | None = None) -> STGCN:
    """Build an ST-GCN; ``adjacency`` defaults to the normalized 27-joint graph."""
    if cfg.kind != "stgcn":
        raise InvalidArgumentError(f"build_stgcn needs kind='stgcn', got {cfg.kind!r}")
    return STGCN(cfg, adjacency)
