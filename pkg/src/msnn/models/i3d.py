"""Reduced-width inflated inception network for the image streams."""

from __future__ import annotations

import numpy as np

from .. import ops
from ..errors import InvalidArgumentError
from ..tensor import Tensor, concat
from .base import Linear, MaxPool3d, Module, ModelConfig, Unit3D

# Reference channel counts per inception submodule:
# (b0, b1 reduce, b1, b2 reduce, b2, b3 pool projection).
INCEPTION_CHANNELS: list[tuple[str, tuple[int, ...]]] = [
    ("mixed_3b", (64, 96, 128, 16, 32, 32)),
    ("mixed_3c", (128, 128, 192, 32, 96, 64)),
    ("mixed_4b", (192, 96, 208, 16, 48, 64)),
    ("mixed_4c", (160, 112, 224, 24, 64, 64)),
    ("mixed_4d", (128, 128, 256, 24, 64, 64)),
    ("mixed_4e", (112, 144, 288, 32, 64, 64)),
    ("mixed_4f", (256, 160, 320, 32, 128, 128)),
    ("mixed_5b", (256, 160, 320, 32, 128, 128)),
    ("mixed_5c", (384, 192, 384, 48, 128, 128)),
]
# Pools inserted before these submodules in the reference stack.
_POOL_BEFORE = {"mixed_4b": ((3, 3, 3), (2, 2, 2)), "mixed_5b": ((2, 2, 2), (2, 2, 2))}


def _scaled(channels: int, multiplier: float, where: str) -> int:
    out = int(round(channels * multiplier))
    if out < 1:
        raise InvalidArgumentError(
            f"width_multiplier {multiplier} leaves {where} with no channels (from {channels})")
    return out


class Inception(Module):
    """Four parallel branches concatenated along channels."""

    def __init__(self, in_ch: int, widths: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        c0, c1r, c1, c2r, c2, c3 = widths
        self.branch0 = Unit3D(in_ch, c0, (1, 1, 1), rng=rng)
        self.branch1a = Unit3D(in_ch, c1r, (1, 1, 1), rng=rng)
        self.branch1b = Unit3D(c1r, c1, (3, 3, 3), rng=rng)
        self.branch2a = Unit3D(in_ch, c2r, (1, 1, 1), rng=rng)
        self.branch2b = Unit3D(c2r, c2, (3, 3, 3), rng=rng)
        self.branch3pool = MaxPool3d((3, 3, 3), (1, 1, 1))
        self.branch3 = Unit3D(in_ch, c3, (1, 1, 1), rng=rng)
        self.out_channels = c0 + c1 + c2 + c3

    def forward(self, x):
        return concat([
            self.branch0(x),
            self.branch1b(self.branch1a(x)),
            self.branch2b(self.branch2a(x)),
            self.branch3(self.branch3pool(x)),
        ], axis=1)


class I3D(Module):
    """Stem convolutions, stacked inception submodules, global pooling, linear head.

    Input ``[N, input_channels, T, input_size, input_size]``; any ``T >= 1``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if not 1 <= cfg.inception_blocks <= len(INCEPTION_CHANNELS):
            raise InvalidArgumentError(
                f"inception_blocks must be in [1, {len(INCEPTION_CHANNELS)}], got {cfg.inception_blocks}")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        w = cfg.width_multiplier
        c_stem1 = _scaled(64, w, "stem conv 1")
        c_stem2 = _scaled(64, w, "stem conv 2")
        c_stem3 = _scaled(192, w, "stem conv 3")
        layers: list[Module] = [
            Unit3D(cfg.input_channels, c_stem1, cfg.stem_kernel, cfg.stem_stride, rng=rng),
            MaxPool3d((1, 3, 3), (1, 2, 2)),
            Unit3D(c_stem1, c_stem2, (1, 1, 1), rng=rng),
            Unit3D(c_stem2, c_stem3, (3, 3, 3), rng=rng),
            MaxPool3d((1, 3, 3), (1, 2, 2)),
        ]
        channels = c_stem3
        for name, widths in INCEPTION_CHANNELS[:cfg.inception_blocks]:
            if name in _POOL_BEFORE:
                layers.append(MaxPool3d(*_POOL_BEFORE[name]))
            block = Inception(channels, tuple(_scaled(c, w, f"{name} branch") for c in widths), rng)
            layers.append(block)
            channels = block.out_channels
        self.layers = layers
        self.head = Linear(channels, cfg.num_classes, rng)
        self.feature_channels = channels

    def check_input(self, x: Tensor) -> None:
        cfg = self.cfg
        expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
        if x.ndim != 5 or (x.shape[1], x.shape[3], x.shape[4]) != expected or x.shape[2] < 1:
            raise InvalidArgumentError(
                f"expected input [N, {cfg.input_channels}, T, {cfg.input_size}, {cfg.input_size}], "
                f"got {list(x.shape)}")

    def features(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return ops.global_avg_pool(x)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        return self.head(self.features(x))


def build_i3d(cfg: ModelConfig) -> I3D:
    """Build an I3D-lite for ``cfg``; every kernel starts as an inflated 2D draw."""
    if cfg.kind != "i3d":
        raise InvalidArgumentError(f"build_i3d needs kind='i3d', got {cfg.kind!r}")
    return I3D(cfg)
