"""Per-video preprocessing, the on-disk cache, and batch assembly per stream."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import DataError, EmptyDatasetError, InvalidArgumentError
from ..flow import FlowField, FlowParams, flow_to_frames, read_flow_cache, to_grayscale, tvl1_flow, write_flow_cache
from ..regions import extract_local_streams
from ..skeleton import build_feature, read_keypoints_jsonl
from .clips import (LOCAL_STREAMS, STREAMS, ClipIndex, ClipSample, PipelineConfig, augment, center_crop,
                    sample_indices)
from .manifest import Dataset, ManifestEntry
from .video import normalize_frames, read_frames

log = logging.getLogger(__name__)

CACHE_ENV = "MSNN_CACHE_DIR"


@dataclass
class PreparedClip:
    """Everything a clip needs before sampling, time first.

    rgb [T, S, S, 3]; flow [2, T, S, S] (already clipped and scaled);
    left_hand/right_hand/face [T, L, L, 3]; skeleton [2, T, 27].
    """

    rgb: np.ndarray
    flow: np.ndarray
    left_hand: np.ndarray
    right_hand: np.ndarray
    face: np.ndarray
    skeleton: np.ndarray
    label: int

    @property
    def num_frames(self) -> int:
        return self.skeleton.shape[1]


def cache_root(explicit=None) -> Path | None:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def _cache_key(entry: ManifestEntry, cfg: PipelineConfig, flow_params: FlowParams) -> str:
    payload = json.dumps({
        "video": str(entry.video_path), "keypoints": str(entry.keypoints_path),
        "box": list(entry.signer_box), "cfg": asdict(cfg), "flow": asdict(flow_params),
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def compute_flows(norm_frames: np.ndarray, flow_params: FlowParams) -> list[FlowField]:
    """Flow t is computed from normalised frames t and t + 1; the last frame gets zero flow."""
    gray = [to_grayscale(f) for f in norm_frames]
    flows = [tvl1_flow(gray[t], gray[t + 1], flow_params) for t in range(len(gray) - 1)]
    h, w = gray[0].shape
    flows.append(FlowField.zeros(h, w))
    return flows


def preprocess_entry(entry: ManifestEntry, cfg: PipelineConfig, flow_params: FlowParams | None = None,
                     cache_dir=None) -> PreparedClip:
    """Normalise, compute flow, crop local regions and build the skeleton feature for one video."""
    flow_params = flow_params or FlowParams()
    root = cache_root(cache_dir)
    if root is not None:
        key = _cache_key(entry, cfg, flow_params)
        arrays_path, flow_path = root / f"{key}.npz", root / f"{key}.flo"
        if arrays_path.exists() and flow_path.exists():
            with np.load(arrays_path) as z:
                arrays = {k: z[k] for k in z.files}
            flows = read_flow_cache(flow_path)
            return _assemble(arrays, flows, cfg, entry.label)
    frames = read_frames(entry.video_path)
    h, w = frames.shape[1:3]
    skeleton = read_keypoints_jsonl(entry.keypoints_path, w, h)
    if len(skeleton) != len(frames):
        raise DataError(f"{entry.video_path}: {len(frames)} frames but {len(skeleton)} keypoint records")
    norm = normalize_frames(frames, entry.signer_box, cfg.norm_size)
    flows = compute_flows(norm, flow_params)
    local = extract_local_streams(frames, skeleton, cfg.local_size)
    arrays = {
        "rgb": norm.astype(np.float32),
        "skeleton": build_feature(skeleton).data.astype(np.float32),
        **{k: v.astype(np.float32) for k, v in local.items()},
    }
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        np.savez(arrays_path, **arrays)
        write_flow_cache(flow_path, flows)
    # round through float32 so a cache hit and a fresh computation agree bit for bit
    flows = [FlowField(f.u.astype(np.float32).astype(np.float64), f.v.astype(np.float32).astype(np.float64))
             for f in flows]
    return _assemble(arrays, flows, cfg, entry.label)


def _assemble(arrays: dict, flows: list[FlowField], cfg: PipelineConfig, label: int) -> PreparedClip:
    flow = flow_to_frames(flows, cfg.flow_clip_bound).data.astype(np.float32)
    return PreparedClip(arrays["rgb"], flow, arrays["left_hand"], arrays["right_hand"], arrays["face"],
                        arrays["skeleton"], label)


def prepare_dataset(dataset: Dataset, cfg: PipelineConfig, flow_params: FlowParams | None = None,
                    cache_dir=None, entries: list[ManifestEntry] | None = None) -> list[PreparedClip]:
    entries = dataset.entries if entries is None else entries
    prepared = []
    for i, entry in enumerate(entries):
        prepared.append(preprocess_entry(entry, cfg, flow_params, cache_dir))
        if (i + 1) % 25 == 0:
            log.info("preprocessed %d/%d videos", i + 1, len(entries))
    return prepared


def _needed(streams) -> set[str]:
    needed = set(streams)
    if needed & {"left_hand", "right_hand"}:
        needed |= {"left_hand", "right_hand"}
    return needed


def make_clip(clip: PreparedClip, index: ClipIndex, streams=STREAMS) -> ClipSample:
    """Gather the indexed frames of the requested modalities, channels first.

    Flow at padding positions is zero: duplicated frames carry no motion.
    Modalities that were not requested are left as ``None``.
    """
    needed = _needed(streams)
    idx = index.indices
    out: dict[str, np.ndarray | None] = {s: None for s in STREAMS}
    if "rgb" in needed:
        out["rgb"] = np.transpose(clip.rgb[idx], (3, 0, 1, 2)).astype(np.float64)
    if "flow" in needed:
        flow = clip.flow[:, idx].astype(np.float64)
        flow[:, index.padded] = 0.0
        out["flow"] = flow
    for name in LOCAL_STREAMS:
        if name in needed:
            out[name] = np.transpose(getattr(clip, name)[idx], (3, 0, 1, 2)).astype(np.float64)
    if "skeleton" in needed:
        out["skeleton"] = clip.skeleton[:, idx].astype(np.float64)
    return ClipSample(label=clip.label, **out)


class ClipDataset:
    """Prepared clips plus the sampling rules for training and evaluation.

    Randomness is split per sample: epoch ``e`` shuffles with
    ``default_rng([seed, e])`` and sample ``i`` draws from
    ``default_rng([seed, e, i + 1])``, so batch order and content depend only
    on (seed, epoch).
    """

    def __init__(self, clips: list[PreparedClip], cfg: PipelineConfig):
        if not clips:
            raise EmptyDatasetError("no clips")
        self.clips = clips
        self.cfg = cfg

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clips])

    def train_sample(self, i: int, stream: str, seed: int, epoch: int, augment_clip: bool = True) -> np.ndarray:
        rng = np.random.default_rng([seed, epoch, i + 1])
        clip = self.clips[i]
        index = sample_indices(clip.num_frames, self.cfg.clip_length, "train", rng)
        sample = make_clip(clip, index, (stream,))
        if augment_clip:
            sample = augment(sample, rng, self.cfg.input_size, frame_size=self.cfg.norm_size)
        else:
            sample = center_crop(sample, self.cfg.input_size)
        return sample.stream(stream)

    def train_batches(self, stream: str, seed: int, epoch: int, batch_size: int,
                      augment_clip: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        if stream not in STREAMS:
            raise InvalidArgumentError(f"unknown stream {stream!r}")
        order = np.random.default_rng([seed, epoch]).permutation(len(self.clips))
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            x = np.stack([self.train_sample(int(i), stream, seed, epoch, augment_clip) for i in chunk])
            yield x, np.array([self.clips[i].label for i in chunk])

    def eval_input(self, i: int, stream: str, min_frames: int = 1) -> np.ndarray:
        """All frames, centre crop, no flip; shape [1, ...]."""
        clip = self.clips[i]
        index = sample_indices(clip.num_frames, self.cfg.clip_length, "eval", min_length=min_frames)
        sample = center_crop(make_clip(clip, index, (stream,)), self.cfg.input_size)
        return sample.stream(stream)[None]
