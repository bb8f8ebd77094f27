"""Dataset ingestion, normalisation, sampling, augmentation and synthetic data."""

from .clips import (IMAGE_STREAMS, LOCAL_STREAMS, STREAMS, ClipIndex, ClipSample, PipelineConfig, augment,
                    center_crop, crop_sample, flip_sample, sample_clip, sample_indices)
from .manifest import Dataset, ManifestEntry, class_histograms, load_manifest, split_counts, write_manifest
from .pipeline import CACHE_ENV, ClipDataset, PreparedClip, make_clip, prepare_dataset, preprocess_entry
from .synthetic import SyntheticSpec, clip_script, generate_synthetic_dataset, keypoint_track, render_clip
from .video import NormalizeTransform, normalize_frames, normalize_transform, read_frames, write_frames

__all__ = [
    "CACHE_ENV", "ClipDataset", "ClipIndex", "ClipSample", "Dataset", "IMAGE_STREAMS", "LOCAL_STREAMS",
    "ManifestEntry", "NormalizeTransform", "PipelineConfig", "PreparedClip", "STREAMS", "SyntheticSpec",
    "augment", "center_crop", "class_histograms", "clip_script", "crop_sample", "flip_sample",
    "generate_synthetic_dataset", "keypoint_track", "load_manifest", "make_clip", "normalize_frames",
    "normalize_transform", "prepare_dataset", "preprocess_entry", "read_frames", "render_clip",
    "sample_clip", "sample_indices", "split_counts", "write_frames", "write_manifest",
]
