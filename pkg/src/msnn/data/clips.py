"""Temporal sampling, clip assembly and train-time augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidArgumentError
from ..skeleton import MIRROR_PERMUTATION

IMAGE_STREAMS = ("rgb", "flow", "left_hand", "right_hand", "face")
STREAMS = IMAGE_STREAMS + ("skeleton",)
LOCAL_STREAMS = ("left_hand", "right_hand", "face")


@dataclass(frozen=True)
class PipelineConfig:
    """Sizes used between raw frames and network inputs.

    ``norm_size`` is the normalised frame side, ``input_size`` the random crop
    fed to the rgb and flow networks, ``local_size`` the hand/face patch side and
    ``clip_length`` the train-time clip length M.
    """

    norm_size: int = 256
    input_size: int = 224
    local_size: int = 224
    clip_length: int = 64
    flow_clip_bound: float = 20.0

    def __post_init__(self):
        if not 1 <= self.input_size <= self.norm_size:
            raise InvalidArgumentError("input_size must be in [1, norm_size]")
        if self.local_size < 1 or self.clip_length < 1:
            raise InvalidArgumentError("local_size and clip_length must be positive")

    @classmethod
    def desk(cls, input_size: int = 64, clip_length: int = 8) -> PipelineConfig:
        """Downscaled preset: every size shrinks by ``input_size / 224``."""
        return cls(norm_size=int(round(256 * input_size / 224)), input_size=input_size,
                   local_size=input_size, clip_length=clip_length)


@dataclass(frozen=True)
class ClipIndex:
    """Frame indices of a clip and which positions are padding duplicates."""

    indices: np.ndarray
    padded: np.ndarray


def sample_indices(num_frames: int, length: int, mode: str, rng: np.random.Generator | None = None,
                   min_length: int = 1) -> ClipIndex:
    """Choose which frames form a clip.

    Train mode takes ``length`` consecutive frames from a uniform start. Shorter
    videos are padded by repeating the first frame in front or the last frame
    at the back, one side chosen at random per clip. Eval mode keeps every
    frame, padded the same way (at the back) only when shorter than ``min_length``.
    """
    if num_frames < 1:
        raise InvalidArgumentError("video has no frames")
    if mode == "train":
        if rng is None:
            raise InvalidArgumentError("train-mode sampling needs an rng")
        if num_frames >= length:
            start = int(rng.integers(0, num_frames - length + 1))
            idx = np.arange(start, start + length)
            return ClipIndex(idx, np.zeros(length, dtype=bool))
        missing = length - num_frames
        if rng.random() < 0.5:
            idx = np.concatenate([np.zeros(missing, dtype=np.int64), np.arange(num_frames)])
            padded = np.arange(length) < missing
        else:
            idx = np.concatenate([np.arange(num_frames), np.full(missing, num_frames - 1)])
            padded = np.arange(length) >= num_frames
        return ClipIndex(idx, padded)
    if mode == "eval":
        n = max(num_frames, min_length)
        idx = np.minimum(np.arange(n), num_frames - 1)
        return ClipIndex(idx, np.arange(n) >= num_frames)
    raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")


def sample_clip(frames, length: int = 64, mode: str = "train", rng: np.random.Generator | None = None):
    """Frame block for a clip (see :func:`sample_indices`)."""
    frames = np.asarray(frames)
    if len(frames) == 0:
        raise InvalidArgumentError("video has no frames")
    return frames[sample_indices(len(frames), length, mode, rng).indices]


@dataclass
class ClipSample:
    """All modalities of one clip, channels first.

    rgb [3, M, S, S]; flow [2, M, S, S]; left_hand/right_hand/face [3, M, L, L];
    skeleton [2, M, 27]. Modalities not loaded are ``None``.
    """

    rgb: np.ndarray | None
    flow: np.ndarray | None
    left_hand: np.ndarray | None
    right_hand: np.ndarray | None
    face: np.ndarray | None
    skeleton: np.ndarray | None
    label: int

    def stream(self, name: str) -> np.ndarray:
        if name not in STREAMS:
            raise InvalidArgumentError(f"unknown stream {name!r}")
        return getattr(self, name)

    @property
    def length(self) -> int:
        return self.skeleton.shape[1]


def crop_sample(sample: ClipSample, top: int, left: int, size: int) -> ClipSample:
    """Spatial crop of the rgb and flow modalities; local patches are left alone."""
    s = np.s_[..., top:top + size, left:left + size]
    return replace(sample, rgb=_maybe(sample.rgb, lambda a: a[s]), flow=_maybe(sample.flow, lambda a: a[s]))


def _maybe(array, fn):
    return None if array is None else fn(array)


def _mirror(array):
    return None if array is None else array[..., ::-1].copy()


def _mirror_flow(flow):
    flow = flow[..., ::-1].copy()
    flow[0] = -flow[0]
    return flow


def _mirror_skeleton(skeleton):
    skeleton = skeleton[:, :, MIRROR_PERMUTATION].copy()
    skeleton[0] = -skeleton[0]
    return skeleton


def flip_sample(sample: ClipSample) -> ClipSample:
    """Horizontal mirror of every modality present.

    Images reverse their width axis, flow also negates u, skeleton x is negated
    with left/right joints swapped, and the two hand streams trade places.
    """
    return replace(
        sample,
        rgb=_mirror(sample.rgb),
        flow=_maybe(sample.flow, _mirror_flow),
        left_hand=_mirror(sample.right_hand),
        right_hand=_mirror(sample.left_hand),
        face=_mirror(sample.face),
        skeleton=_maybe(sample.skeleton, _mirror_skeleton),
    )


def augment(sample: ClipSample, rng: np.random.Generator, crop_size: int,
            flip_probability: float = 0.5, frame_size: int | None = None) -> ClipSample:
    """Random crop (one offset per clip) then a random horizontal flip.

    The draws are the same whichever modalities are loaded, so a sample
    carrying only some streams is augmented exactly like the full sample.
    ``frame_size`` gives the rgb/flow side when neither is loaded.
    """
    h, w = _frame_shape(sample) if frame_size is None else (frame_size, frame_size)
    if h == 0:
        raise InvalidArgumentError("augment needs frame_size when neither rgb nor flow is loaded")
    if crop_size > min(h, w):
        raise InvalidArgumentError(f"crop {crop_size} larger than frames {h}x{w}")
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    flip = rng.random() < flip_probability
    out = crop_sample(sample, top, left, crop_size)
    return flip_sample(out) if flip else out


def _frame_shape(sample: ClipSample) -> tuple[int, int]:
    """Spatial size of the croppable modalities (rgb or flow); (0, 0) when absent."""
    for array in (sample.rgb, sample.flow):
        if array is not None:
            return array.shape[-2:]
    return (0, 0)


def center_crop(sample: ClipSample, crop_size: int) -> ClipSample:
    h, w = _frame_shape(sample)
    return crop_sample(sample, (h - crop_size) // 2, (w - crop_size) // 2, crop_size)
