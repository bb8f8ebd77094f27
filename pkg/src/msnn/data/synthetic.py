"""Scripted synthetic sign videos with analytic keypoint tracks.

Every class is a deterministic "sign": both wrists follow mirror-symmetric
parametric curves, hand blobs sit where the hand box expects them, and the
face carries a class-specific mouth angle. The first ``num_shape_pairs``
pairs of classes (0/1, 2/3, ...) share trajectory and face, and differ only in
hand shape: square versus disc of equal area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import InvalidArgumentError
from ..regions import DEFAULT_CONSTANTS
from ..skeleton import EXTRA_NAMES, JOINT_NAMES, NUM_JOINTS, SkeletonSequence, write_keypoints_jsonl
from .manifest import write_manifest
from .video import write_frames

PAIR_SHAPES = ("square", "disc")
OTHER_SHAPES = ("triangle", "cross", "ring", "diamond", "hbar", "vbar")

SHIRT = np.array([0.15, 0.25, 0.55])
SKIN = np.array([0.95, 0.8, 0.65])
HEAD = np.array([0.9, 0.72, 0.58])
DARK = np.array([0.1, 0.08, 0.08])


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    clips_per_class: int
    seed: int = 0
    frame_size: int = 128
    min_frames: int = 8
    max_frames: int = 12
    num_shape_pairs: int = 1
    hand_radius: float = 4.0
    noise: float = 0.02

    def __post_init__(self):
        if self.num_classes < 2 or self.clips_per_class < 1:
            raise InvalidArgumentError("need at least 2 classes and 1 clip per class")
        if not 0 <= 2 * self.num_shape_pairs <= self.num_classes:
            raise InvalidArgumentError("num_shape_pairs needs two classes per pair")
        if not 2 <= self.min_frames <= self.max_frames:
            raise InvalidArgumentError("frame counts must satisfy 2 <= min_frames <= max_frames")
        if self.frame_size < 64:
            raise InvalidArgumentError("frame_size must be at least 64")

    @property
    def num_trajectories(self) -> int:
        return self.num_classes - self.num_shape_pairs


@dataclass(frozen=True)
class ClipScript:
    """Everything needed to render one clip deterministically."""

    label: int
    clip: int
    trajectory: int
    face: int
    shape: str
    num_frames: int
    shift: tuple[float, float]
    amplitude: float
    phase: float
    texture_seed: int


def class_identity(spec: SyntheticSpec, label: int) -> tuple[int, int, str]:
    """``(trajectory id, face id, hand shape)`` for a class."""
    if label < 2 * spec.num_shape_pairs:
        pair = label // 2
        return pair, pair, PAIR_SHAPES[label % 2]
    j = label - spec.num_shape_pairs
    return j, j, OTHER_SHAPES[(label - 2 * spec.num_shape_pairs) % len(OTHER_SHAPES)]


def clip_script(spec: SyntheticSpec, label: int, clip: int) -> ClipScript:
    rng = np.random.default_rng([spec.seed, label, clip])
    traj, face, shape = class_identity(spec, label)
    return ClipScript(
        label=label, clip=clip, trajectory=traj, face=face, shape=shape,
        num_frames=int(rng.integers(spec.min_frames, spec.max_frames + 1)),
        shift=(float(rng.uniform(-4, 4)), float(rng.uniform(-4, 4))),
        amplitude=float(rng.uniform(0.85, 1.15)),
        phase=float(rng.uniform(-0.3, 0.3)),
        texture_seed=int(rng.integers(0, 2**31)),
    )


def _scale(spec: SyntheticSpec) -> float:
    return spec.frame_size / 128.0


def body_layout(spec: SyntheticSpec, script: ClipScript) -> dict[str, np.ndarray]:
    """Static joints (pixels) for a clip, already shifted."""
    k = _scale(spec)
    off = np.array(script.shift) * k
    pts = {
        "nose": (64, 34), "neck": (64, 48), "right_shoulder": (48, 54), "left_shoulder": (80, 54),
        "mid_hip": (64, 104), "right_ear": (54, 34), "left_ear": (74, 34),
    }
    return {name: np.array(p, dtype=float) * k + off for name, p in pts.items()}


def wrist_positions(spec: SyntheticSpec, script: ClipScript) -> tuple[np.ndarray, np.ndarray]:
    """Left and right wrist tracks, each [T, 2]; the right is the mirror of the left."""
    k = _scale(spec)
    j, J = script.trajectory, max(spec.num_trajectories, 1)
    theta = math.pi * j / J
    freq = 1.0 + 0.5 * (j % 2)
    ellipse = 0.5 if j % 3 == 1 else 0.0
    n = script.num_frames
    tau = np.arange(n) / (n - 1)
    arg = 2 * math.pi * freq * tau + script.phase
    amp = 14.0 * k * script.amplitude
    main = np.stack([math.cos(theta) * np.sin(arg), math.sin(theta) * np.sin(arg)], axis=1)
    side = np.stack([-math.sin(theta) * np.cos(arg), math.cos(theta) * np.cos(arg)], axis=1)
    off = np.array(script.shift) * k
    left = np.array([82.0, 80.0]) * k + off + amp * (main + ellipse * side)
    center_x = 64.0 * k + off[0]
    right = left.copy()
    right[:, 0] = 2 * center_x - left[:, 0]
    return left, right


def _elbow(shoulder: np.ndarray, wrist: np.ndarray, outward: float, k: float) -> np.ndarray:
    mid = (shoulder[None] + wrist) / 2
    return mid + np.array([outward * 6.0 * k, 8.0 * k])


def _hand_points(wrist: np.ndarray, elbow: np.ndarray, radius: float) -> np.ndarray:
    """[T, 11, 2]: wrist then (base, tip) per finger, fanned along the forearm."""
    direction = wrist - elbow
    angle = np.arctan2(direction[:, 1], direction[:, 0])
    center = elbow + DEFAULT_CONSTANTS.hand_offset * direction
    pts = [wrist]
    for f in range(5):
        a = angle + (f - 2) * 0.35
        unit = np.stack([np.cos(a), np.sin(a)], axis=1)
        pts += [center + 0.5 * radius * unit, center + 1.2 * radius * unit]
    return np.stack(pts, axis=1)


def keypoint_track(spec: SyntheticSpec, script: ClipScript) -> SkeletonSequence:
    """Analytic keypoints for a clip (confidence 1 everywhere)."""
    k = _scale(spec)
    body = body_layout(spec, script)
    left_w, right_w = wrist_positions(spec, script)
    left_e = _elbow(body["left_shoulder"], left_w, +1.0, k)
    right_e = _elbow(body["right_shoulder"], right_w, -1.0, k)
    n = script.num_frames
    xy = np.zeros((n, NUM_JOINTS, 2))
    for name in ("nose", "neck", "right_shoulder", "left_shoulder", "mid_hip"):
        xy[:, JOINT_NAMES.index(name)] = body[name]
    radius = spec.hand_radius * k
    xy[:, 5:16] = _hand_points(left_w, left_e, radius)
    xy[:, 16:27] = _hand_points(right_w, right_e, radius)
    extra = np.zeros((n, len(EXTRA_NAMES), 2))
    extra[:, EXTRA_NAMES.index("right_elbow")] = right_e
    extra[:, EXTRA_NAMES.index("left_elbow")] = left_e
    extra[:, EXTRA_NAMES.index("right_ear")] = body["right_ear"]
    extra[:, EXTRA_NAMES.index("left_ear")] = body["left_ear"]
    ones = np.ones((n, 1))
    points = np.concatenate([xy, np.ones((n, NUM_JOINTS, 1))], axis=2)
    extra = np.concatenate([extra, ones[:, :, None].repeat(len(EXTRA_NAMES), axis=1)], axis=2)
    return SkeletonSequence(points, spec.frame_size, spec.frame_size, extra)


def signer_box(spec: SyntheticSpec, script: ClipScript) -> tuple[float, float, float, float]:
    k = _scale(spec)
    return (30.0 * k + script.shift[0] * k, 18.0 * k + script.shift[1] * k, 68.0 * k, 100.0 * k)


def shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    """Pixel mask of a hand shape of nominal radius ``r``; square and disc have equal area."""
    if shape == "disc":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        h = r * math.sqrt(math.pi) / 2
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    if shape == "triangle":
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if shape == "cross":
        w = r / 3
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    if shape == "ring":
        d2 = dx ** 2 + dy ** 2
        return (d2 <= r ** 2) & (d2 >= (r / 2) ** 2)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r * 1.2
    if shape == "hbar":
        return (np.abs(dx) <= r * 1.3) & (np.abs(dy) <= r * 0.4)
    if shape == "vbar":
        return (np.abs(dy) <= r * 1.3) & (np.abs(dx) <= r * 0.4)
    raise InvalidArgumentError(f"unknown hand shape {shape!r}")


def _segment_mask(xx, yy, a, b, width):
    ab = b - a
    denom = float(ab @ ab) or 1.0
    t = np.clip(((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / denom, 0.0, 1.0)
    px, py = a[0] + t * ab[0], a[1] + t * ab[1]
    return (xx - px) ** 2 + (yy - py) ** 2 <= (width / 2) ** 2


def mouth_angle(spec: SyntheticSpec, face: int) -> float:
    """Angles stay within [0, pi/2] so a mirrored face never mimics another class."""
    faces = spec.num_classes - spec.num_shape_pairs
    return 0.5 * math.pi * face / max(faces - 1, 1)


def render_clip(spec: SyntheticSpec, script: ClipScript) -> np.ndarray:
    """Frames [T, S, S, 3] in [0, 1]."""
    k = _scale(spec)
    size = spec.frame_size
    rng = np.random.default_rng(script.texture_seed)
    texture = gaussian_filter(rng.random((size, size, 3)), sigma=(6 * k, 6 * k, 0))
    texture = 0.5 + (texture - texture.mean()) * 4.0
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    seq = keypoint_track(spec, script)
    body = body_layout(spec, script)
    radius = spec.hand_radius * k
    angle = mouth_angle(spec, script.face)
    mouth_dir = np.array([math.cos(angle), math.sin(angle)])
    head_c = (body["right_ear"] + body["left_ear"]) / 2
    mouth_c = head_c + np.array([0.0, 5.0 * k])
    frames = np.empty((script.num_frames, size, size, 3))
    rs, ls, hip = body["right_shoulder"], body["left_shoulder"], body["mid_hip"]
    torso = (xx >= rs[0]) & (xx <= ls[0]) & (yy >= rs[1]) & (yy <= hip[1])
    head = (xx - head_c[0]) ** 2 + (yy - head_c[1]) ** 2 <= (11 * k) ** 2
    eyes = np.zeros_like(head)
    for sx in (-4.0, 4.0):
        eyes |= (xx - head_c[0] - sx * k) ** 2 + (yy - head_c[1] + 2 * k) ** 2 <= (1.5 * k) ** 2
    mouth = _segment_mask(xx, yy, mouth_c - 5 * k * mouth_dir, mouth_c + 5 * k * mouth_dir, 2.0 * k)
    for t in range(script.num_frames):
        img = np.clip(texture, 0, 1).copy()
        img[torso] = SHIRT
        for side, shoulder, elbow_name in (("left", ls, "left_elbow"), ("right", rs, "right_elbow")):
            elbow = seq.extra[t, EXTRA_NAMES.index(elbow_name), :2]
            wrist = seq.points[t, JOINT_NAMES.index(f"{side}_wrist"), :2]
            arm = _segment_mask(xx, yy, shoulder, elbow, 4 * k) | _segment_mask(xx, yy, elbow, wrist, 3 * k)
            img[arm] = SHIRT
            center = elbow + DEFAULT_CONSTANTS.hand_offset * (wrist - elbow)
            img[shape_mask(script.shape, xx - center[0], yy - center[1], radius)] = SKIN
        img[head] = HEAD
        img[eyes] = DARK
        img[mouth] = DARK
        img += spec.noise * rng.standard_normal(img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)
    return frames


def _split_assignment(n: int, rng: np.random.Generator) -> list[str]:
    n_val = n_test = int(round(n / 6))
    if n >= 3:
        n_val, n_test = max(n_val, 1), max(n_test, 1)
    splits = ["train"] * (n - n_val - n_test) + ["val"] * n_val + ["test"] * n_test
    order = rng.permutation(n)
    return [splits[i] for i in order]


def generate_synthetic_dataset(out_dir, spec: SyntheticSpec, render: bool = True) -> Path:
    """Write videos, keypoint files and ``manifest.csv`` under ``out_dir``.

    Each class is split 4:1:1 into train/val/test. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "keypoints").mkdir(parents=True, exist_ok=True)
    rows = []
    for label in range(spec.num_classes):
        splits = _split_assignment(spec.clips_per_class, np.random.default_rng([spec.seed, label, 2**31]))
        for clip in range(spec.clips_per_class):
            script = clip_script(spec, label, clip)
            name = f"c{label:03d}_{clip:04d}"
            if render:
                write_frames(out_dir / "videos" / name, render_clip(spec, script))
            write_keypoints_jsonl(out_dir / "keypoints" / f"{name}.jsonl", keypoint_track(spec, script))
            x, y, w, h = signer_box(spec, script)
            rows.append({
                "video_path": f"videos/{name}", "keypoints_path": f"keypoints/{name}.jsonl",
                "box_x": repr(x), "box_y": repr(y), "box_w": repr(w), "box_h": repr(h),
                "label": label, "split": splits[clip], "signer_id": f"signer{clip % 3}",
            })
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
