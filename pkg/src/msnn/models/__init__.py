"""Network builders for the image and skeleton streams."""

from .base import BatchNorm, Linear, ModelConfig, Module, Unit3D, registry_hash
from .checkpoint import MAGIC, decode_records, encode_records
from .i3d import I3D, build_i3d
from .stgcn import STGCN, GraphConv, build_stgcn

# At 64x64 and 8 frames a 7x7x7 stem sees most of the clip in one window; 3x3x3 keeps detail.
DESK_I3D_OVERRIDES = {"stem_kernel": (3, 3, 3)}


def build_model(cfg: ModelConfig) -> Module:
    """Dispatch on ``cfg.kind``."""
    return build_i3d(cfg) if cfg.kind == "i3d" else build_stgcn(cfg)


def stream_model_config(stream: str, num_classes: int, input_size: int = 224, seed: int = 0,
                        **overrides) -> ModelConfig:
    """Config for one stream: ST-GCN for skeleton, I3D-lite otherwise (2 input channels for flow)."""
    if stream == "skeleton":
        return ModelConfig(num_classes=num_classes, kind="stgcn", seed=seed, **overrides)
    channels = 2 if stream == "flow" else 3
    return ModelConfig(num_classes=num_classes, kind="i3d", input_channels=channels,
                       input_size=input_size, seed=seed, **overrides)


def forward(model: Module, x):
    """Run ``model`` on ``x``; records the graph only when gradients are enabled."""
    return model(x)


__all__ = [
    "BatchNorm", "DESK_I3D_OVERRIDES", "GraphConv", "I3D", "Linear", "MAGIC", "ModelConfig", "Module", "STGCN", "Unit3D",
    "build_i3d", "build_model", "build_stgcn", "decode_records", "encode_records", "forward",
    "registry_hash", "stream_model_config",
]
