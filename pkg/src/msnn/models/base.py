"""Module/parameter bookkeeping and the shared layers."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .. import ops
from ..errors import InvalidArgumentError
from ..tensor import Tensor, pad, relu


@dataclass
class ModelConfig:
    """Builder settings for both network families.

    ``width_multiplier`` scales the reference inception channel counts;
    ``input_size`` is the square spatial extent the I3D stream is fed.
    ``input_channels`` defaults to 3 for I3D and 2 for ST-GCN.
    """

    num_classes: int
    kind: str = "i3d"
    input_channels: int | None = None
    width_multiplier: float = 0.25
    inception_blocks: int = 4
    stem_kernel: tuple[int, int, int] = (7, 7, 7)
    stem_stride: tuple[int, int, int] = (2, 2, 2)
    input_size: int = 224
    stgcn_blocks: int = 4
    stgcn_channels: tuple[int, ...] = (16, 16, 32, 64)
    stgcn_strides: tuple[int, ...] = (1, 1, 2, 2)
    temporal_kernel: int = 9
    num_nodes: int = 27
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidArgumentError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.kind not in ("i3d", "stgcn"):
            raise InvalidArgumentError(f"unknown model kind {self.kind!r}")
        if self.input_channels is None:
            self.input_channels = 3 if self.kind == "i3d" else 2
        if self.input_channels < 1:
            raise InvalidArgumentError("input_channels must be >= 1")
        if not 0 < self.width_multiplier <= 1:
            raise InvalidArgumentError("width_multiplier must be in (0, 1]")
        if self.kind == "stgcn":
            if len(self.stgcn_channels) != self.stgcn_blocks or len(self.stgcn_strides) != self.stgcn_blocks:
                raise InvalidArgumentError("stgcn_channels and stgcn_strides need one entry per block")
        self.stem_kernel = tuple(self.stem_kernel)
        self.stem_stride = tuple(self.stem_stride)
        self.stgcn_channels = tuple(self.stgcn_channels)
        self.stgcn_strides = tuple(self.stgcn_strides)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("stem_kernel", "stem_stride", "stgcn_channels", "stgcn_strides"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


class Module:
    """Minimal container: parameters, buffers and submodules found by attribute order."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for name, p in self.named_parameters():
            if name in params:
                raise InvalidArgumentError(f"duplicate parameter name {name}")
            params[name] = p
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def modules(self) -> Iterator[Module]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def summary(self) -> str:
        """One line per parameter plus the total, in registry order."""
        lines = [f"{name}\t{tuple(p.shape)}\t{p.size}" for name, p in self.parameters().items()]
        lines.append(f"total\t{self.num_parameters()}")
        return "\n".join(lines)


def registry_hash(model: Module) -> str:
    h = hashlib.sha256()
    for name, p in model.parameters().items():
        h.update(name.encode())
        h.update(np.asarray(p.shape, dtype=np.int64).tobytes())
        h.update(p.data.tobytes())
    for name, buf in model.named_buffers():
        h.update(name.encode())
        h.update(buf.tobytes())
    return h.hexdigest()


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BatchNorm(Module):
    """Per-channel normalisation with running statistics (momentum 0.9, eps 1e-5)."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training, self.momentum, self.eps)


class Unit3D(Module):
    """conv3d -> batch norm -> optional ReLU.

    Spatial padding is ``k // 2`` zeros. Time is padded by replicating the edge
    frames, so a temporally constant clip stays constant through the layer.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel=(1, 1, 1), stride=(1, 1, 1),
                 rng: np.random.Generator | None = None, activation: bool = True,
                 temporal_pad: str = "edge", inflate: bool = True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        kt, kh, kw = kernel
        if inflate:
            k2 = fan_in_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw)
            weight = ops.inflate_kernel(k2, kt).data
        else:
            weight = fan_in_uniform(rng, (out_ch, in_ch, kt, kh, kw), in_ch * kt * kh * kw)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn = BatchNorm(out_ch)
        self.stride = tuple(stride)
        self.kernel = tuple(kernel)
        self.activation = activation
        self.temporal_pad = temporal_pad

    def forward(self, x):
        kt, kh, kw = self.kernel
        lo, hi = (kt - 1) // 2, kt // 2
        if self.temporal_pad == "edge":
            x = pad(x, [(0, 0), (0, 0), (lo, hi), (0, 0), (0, 0)], mode="edge")
            tpad = 0
        else:
            tpad = lo
        y = ops.conv3d(x, self.weight, self.bias, stride=self.stride, padding=(tpad, kh // 2, kw // 2))
        y = self.bn(y)
        return relu(y) if self.activation else y


class MaxPool3d(Module):
    def __init__(self, window, stride):
        super().__init__()
        self.window = tuple(window)
        self.stride = tuple(stride)

    def forward(self, x):
        return ops.pool3d(x, self.window, self.stride, "max", padding=tuple(k // 2 for k in self.window))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)
