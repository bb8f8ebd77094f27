"""Hand and face boxes from skeletal points, and the local image patches."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBoxError, InvalidArgumentError, MissingKeypointError
from .skeleton import CONFIDENCE_THRESHOLD, Keypoint, LEFT_WRIST, RIGHT_WRIST, SkeletonSequence


class OutOfFrameWarning(UserWarning):
    """A crop box did not overlap the frame; the patch is all zeros."""


@dataclass(frozen=True)
class BoundingBox:
    center: tuple[float, float]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise DegenerateBoxError(f"box side must be > 0, got {self.side}")

    @property
    def left(self) -> float:
        return self.center[0] - self.side / 2

    @property
    def top(self) -> float:
        return self.center[1] - self.side / 2


@dataclass(frozen=True)
class BoxConstants:
    hand_offset: float = 1.33
    hand_side: float = 1.2
    upper_arm_weight: float = 0.9
    face_side: float = 1.5


DEFAULT_CONSTANTS = BoxConstants()


def _require(point: Keypoint, joint: str, threshold: float) -> np.ndarray:
    if point.confidence < threshold:
        raise MissingKeypointError(joint, point.confidence)
    return point.xy


def hand_box(shoulder: Keypoint, elbow: Keypoint, wrist: Keypoint,
             threshold: float = CONFIDENCE_THRESHOLD,
             constants: BoxConstants = DEFAULT_CONSTANTS) -> BoundingBox:
    """Square box on the forearm's extension beyond the wrist."""
    s = _require(shoulder, "shoulder", threshold)
    e = _require(elbow, "elbow", threshold)
    w = _require(wrist, "wrist", threshold)
    ew = w - e
    center = e + constants.hand_offset * ew
    side = constants.hand_side * max(np.hypot(*ew), constants.upper_arm_weight * np.hypot(*(e - s)))
    return BoundingBox((float(center[0]), float(center[1])), float(side))


def face_box(right_ear: Keypoint, left_ear: Keypoint,
             threshold: float = CONFIDENCE_THRESHOLD,
             constants: BoxConstants = DEFAULT_CONSTANTS) -> BoundingBox:
    r = _require(right_ear, "right_ear", threshold)
    l = _require(left_ear, "left_ear", threshold)
    rl = l - r
    center = r + 0.5 * rl
    return BoundingBox((float(center[0]), float(center[1])), float(constants.face_side * np.hypot(*rl)))


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``image`` ([H, W] or [H, W, C]) at pixel coordinates; zero outside."""
    h, w = image.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape + image.shape[2:])
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            weight = np.where(inside, wx * wy, 0.0)
            vals = image[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            if image.ndim == 3:
                weight = weight[..., None]
            out += weight * vals
    return out


def crop_resize(frame: np.ndarray, box: BoundingBox, out_size: int = 224) -> np.ndarray:
    """Crop ``box`` from ``frame`` and resample it to ``out_size`` square, zero-padding outside."""
    if int(out_size) != out_size or out_size <= 0:
        raise InvalidArgumentError(f"out_size must be a positive integer, got {out_size}")
    h, w = frame.shape[:2]
    # pixel i covers [i - 0.5, i + 0.5)
    if (box.left >= w - 0.5 or box.top >= h - 0.5
            or box.left + box.side <= -0.5 or box.top + box.side <= -0.5):
        warnings.warn(f"box {box} lies entirely outside the {w}x{h} frame", OutOfFrameWarning)
        return np.zeros((out_size, out_size) + frame.shape[2:])
    step = box.side / out_size
    grid = (np.arange(out_size) + 0.5) * step
    ys, xs = np.meshgrid(box.top + grid, box.left + grid, indexing="ij")
    return bilinear_sample(frame, xs, ys)


ARM_CHAINS = {
    "left_hand": ("left_shoulder", "left_elbow", LEFT_WRIST),
    "right_hand": ("right_shoulder", "right_elbow", RIGHT_WRIST),
}
REGIONS = ("left_hand", "right_hand", "face")


def region_boxes(skeleton: SkeletonSequence, threshold: float = CONFIDENCE_THRESHOLD,
                 constants: BoxConstants = DEFAULT_CONSTANTS) -> dict[str, list[BoundingBox | None]]:
    """Per-frame boxes of every region, with the fallback already applied.

    A frame whose keypoints are missing reuses the most recent valid box; frames
    before the first valid box take the first valid one. ``None`` marks a region
    that is never valid.
    """
    if skeleton.extra is None:
        raise InvalidArgumentError("region boxes need elbow and ear points in the keypoint file")
    raw: dict[str, list[BoundingBox | None]] = {r: [] for r in REGIONS}
    for t in range(len(skeleton)):
        for region, (s, e, w) in ARM_CHAINS.items():
            try:
                box = hand_box(skeleton.keypoint(t, s), skeleton.keypoint(t, e),
                               skeleton.keypoint(t, w), threshold, constants)
            except (MissingKeypointError, DegenerateBoxError):
                box = None
            raw[region].append(box)
        try:
            box = face_box(skeleton.keypoint(t, "right_ear"), skeleton.keypoint(t, "left_ear"),
                           threshold, constants)
        except (MissingKeypointError, DegenerateBoxError):
            box = None
        raw["face"].append(box)
    return {region: _fill_missing(boxes) for region, boxes in raw.items()}


def _fill_missing(boxes: list[BoundingBox | None]) -> list[BoundingBox | None]:
    first = next((b for b in boxes if b is not None), None)
    if first is None:
        return boxes
    filled, last = [], first
    for b in boxes:
        last = b if b is not None else last
        filled.append(last)
    return filled


def extract_local_streams(frames, skeleton: SkeletonSequence, out_size: int = 224,
                          threshold: float = CONFIDENCE_THRESHOLD,
                          constants: BoxConstants = DEFAULT_CONSTANTS) -> dict[str, np.ndarray]:
    """Left-hand, right-hand and face patch sequences, each [T, out, out, C]."""
    frames = list(frames)
    if len(frames) != len(skeleton):
        raise InvalidArgumentError(
            f"{len(frames)} frames but {len(skeleton)} skeleton frames")
    boxes = region_boxes(skeleton, threshold, constants)
    out = {}
    for region in REGIONS:
        patches = []
        for frame, box in zip(frames, boxes[region]):
            if box is None:
                patches.append(np.zeros((out_size, out_size) + frame.shape[2:]))
            else:
                patches.append(crop_resize(frame, box, out_size))
        out[region] = np.stack(patches)
    return out
