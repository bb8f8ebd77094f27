"""27-joint skeleton schema, coordinate features and the ST-GCN graph.

Joint order (fixed):

* 0-4 body: nose, neck, right shoulder, left shoulder, mid-hip proxy
* 5-15 left hand: wrist, then (base, tip) for thumb..little finger
* 16-26 right hand: same layout

Keypoint files additionally carry four auxiliary points (right elbow, left
elbow, right ear, left ear) that the region extractor needs but that are not
part of the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError
from .tensor import Tensor

BODY_NAMES = ["nose", "neck", "right_shoulder", "left_shoulder", "mid_hip"]
FINGERS = ["thumb", "index", "middle", "ring", "little"]


def _hand_names(side: str) -> list[str]:
    names = [f"{side}_wrist"]
    for finger in FINGERS:
        names += [f"{side}_{finger}_base", f"{side}_{finger}_tip"]
    return names


JOINT_NAMES = BODY_NAMES + _hand_names("left") + _hand_names("right")
EXTRA_NAMES = ["right_elbow", "left_elbow", "right_ear", "left_ear"]
NUM_JOINTS = len(JOINT_NAMES)
NECK = 1
LEFT_WRIST = 5
RIGHT_WRIST = 16
CONFIDENCE_THRESHOLD = 0.1

BODY_EDGES = [(0, 1), (1, 2), (1, 3), (1, 4)]
ARM_EDGES = [(3, LEFT_WRIST), (2, RIGHT_WRIST)]


def _hand_edges(wrist: int) -> list[tuple[int, int]]:
    edges = []
    for f in range(5):
        base = wrist + 1 + 2 * f
        edges += [(wrist, base), (base, base + 1)]
    return edges


EDGES = BODY_EDGES + ARM_EDGES + _hand_edges(LEFT_WRIST) + _hand_edges(RIGHT_WRIST)

# horizontal mirror: swap shoulders and the two hand groups
MIRROR_PERMUTATION = np.array([0, 1, 3, 2, 4] + list(range(16, 27)) + list(range(5, 16)))
EXTRA_MIRROR_PERMUTATION = np.array([1, 0, 3, 2])


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InvalidArgumentError("keypoint coordinates must be finite")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class SkeletonSequence:
    """Per-frame keypoints as arrays.

    Attributes:
        points: [T, 27, 3] array of (x, y, confidence) in pixels.
        frame_width, frame_height: frame size used for normalisation.
        extra: optional [T, 4, 3] auxiliary points (elbows, ears).
    """

    points: np.ndarray
    frame_width: float
    frame_height: float
    extra: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[1:] != (NUM_JOINTS, 3):
            raise InvalidArgumentError(
                f"expected [T, {NUM_JOINTS}, 3] keypoints, got {self.points.shape}")
        if self.extra is not None:
            self.extra = np.asarray(self.extra, dtype=np.float64)
            if self.extra.shape != (len(self.points), len(EXTRA_NAMES), 3):
                raise InvalidArgumentError(f"auxiliary points have shape {self.extra.shape}")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise InvalidArgumentError("frame dimensions must be positive")

    def __len__(self) -> int:
        return len(self.points)

    def keypoint(self, t: int, joint: int | str) -> Keypoint:
        if isinstance(joint, str):
            if joint in EXTRA_NAMES:
                if self.extra is None:
                    raise DataError(f"sequence has no auxiliary point {joint!r}")
                x, y, c = self.extra[t, EXTRA_NAMES.index(joint)]
                return Keypoint(x, y, c)
            joint = JOINT_NAMES.index(joint)
        x, y, c = self.points[t, joint]
        return Keypoint(x, y, c)


def mirror_sequence(seq: SkeletonSequence) -> SkeletonSequence:
    """Flip horizontally (x -> W - x) and swap left/right joint groups."""
    points = seq.points[:, MIRROR_PERMUTATION].copy()
    points[..., 0] = seq.frame_width - points[..., 0]
    extra = None
    if seq.extra is not None:
        extra = seq.extra[:, EXTRA_MIRROR_PERMUTATION].copy()
        extra[..., 0] = seq.frame_width - extra[..., 0]
    return SkeletonSequence(points, seq.frame_width, seq.frame_height, extra)


def build_feature(seq: SkeletonSequence, threshold: float = CONFIDENCE_THRESHOLD) -> Tensor:
    """Coordinates as a [2, T, 27] tensor scaled to [-1, 1] by frame size.

    Low-confidence joints repeat their last confident position; joints never
    seen so far sit at the normalised origin.
    """
    if len(seq) == 0:
        raise InvalidArgumentError("skeleton sequence has no frames")
    xy = seq.points[..., :2].copy()
    valid = seq.points[..., 2] >= threshold
    last = np.full((NUM_JOINTS, 2), np.nan)
    for t in range(len(xy)):
        last[valid[t]] = xy[t, valid[t]]
        xy[t] = last
    feat = np.empty((2, len(xy), NUM_JOINTS))
    feat[0] = 2.0 * xy[..., 0] / seq.frame_width - 1.0
    feat[1] = 2.0 * xy[..., 1] / seq.frame_height - 1.0
    return Tensor(np.nan_to_num(feat, nan=0.0))


@dataclass(frozen=True)
class SkeletonGraph:
    adjacency: np.ndarray  # A + I, 0/1
    normalized: np.ndarray  # D^-1/2 (A + I) D^-1/2


def normalize_adjacency(adjacency_with_loops: np.ndarray) -> np.ndarray:
    degree = adjacency_with_loops.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    return adjacency_with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_spatial_graph(edges=EDGES, num_nodes: int = NUM_JOINTS) -> SkeletonGraph:
    a = np.eye(num_nodes)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return SkeletonGraph(a, normalize_adjacency(a))


def temporal_edges(num_frames: int, num_nodes: int = NUM_JOINTS) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Edges ((v, t), (v, t + 1)) linking each joint to itself in the next frame."""
    if num_frames < 1:
        raise InvalidArgumentError("need at least one frame")
    return [((v, t), (v, t + 1)) for t in range(num_frames - 1) for v in range(num_nodes)]


# -- keypoint files ----------------------------------------------------------

def write_keypoints_jsonl(path, seq: SkeletonSequence) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in range(len(seq)):
            record = {"frame": t, "points": seq.points[t].tolist()}
            if seq.extra is not None:
                record["extra"] = seq.extra[t].tolist()
            fh.write(json.dumps(record) + "\n")


def read_keypoints_jsonl(path, frame_width: float, frame_height: float) -> SkeletonSequence:
    path = Path(path)
    points, extra = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pts = np.asarray(record["points"], dtype=np.float64)
                frame = int(record["frame"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed keypoint record ({exc})") from exc
            if pts.shape != (NUM_JOINTS, 3):
                raise DataError(f"{path}:{lineno}: expected {NUM_JOINTS} points, got {pts.shape}")
            if frame != len(points):
                raise DataError(f"{path}:{lineno}: frame {frame} out of order")
            points.append(pts)
            if "extra" in record:
                extra.append(np.asarray(record["extra"], dtype=np.float64))
    if not points:
        raise DataError(f"{path}: no keypoint records")
    if extra and len(extra) != len(points):
        raise DataError(f"{path}: auxiliary points present on only some frames")
    return SkeletonSequence(np.stack(points), frame_width, frame_height,
                            np.stack(extra) if extra else None)
