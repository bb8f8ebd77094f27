"""Frame directories and signer-box normalisation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..errors import DataError, InvalidArgumentError
from ..regions import BoundingBox, bilinear_sample

FRAME_PATTERN = "{:06d}.png"


def write_frames(directory, frames) -> None:
    """Store frames ([H, W, 3] floats in [0, 1]) as ``000000.png``, ``000001.png``, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        pixels = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(directory / FRAME_PATTERN.format(i), optimize=False)


def read_frames(directory) -> np.ndarray:
    """Load a frame directory as a float [T, H, W, 3] array in [0, 1]."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"{directory}: no PNG frames")
    for i, p in enumerate(paths):
        if p.name != FRAME_PATTERN.format(i):
            raise DataError(f"{directory}: expected {FRAME_PATTERN.format(i)}, found {p.name}")
    frames = []
    for p in paths:
        with Image.open(p) as img:
            frames.append(np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0)
    if len({f.shape for f in frames}) != 1:
        raise DataError(f"{directory}: frames differ in size")
    return np.stack(frames)


@dataclass(frozen=True)
class NormalizeTransform:
    """Maps raw pixel coordinates to normalised-frame pixel coordinates.

    ``u = (x - left) * scale - 0.5`` where ``left`` is the raw-frame edge of the
    output window.
    """

    scale: float
    left: float
    top: float
    size: int

    def apply(self, x, y):
        return (np.asarray(x) - self.left) * self.scale - 0.5, (np.asarray(y) - self.top) * self.scale - 0.5

    def window(self) -> BoundingBox:
        side = self.size / self.scale
        return BoundingBox((self.left + side / 2, self.top + side / 2), side)


def normalize_transform(signer_box, size: int = 256) -> NormalizeTransform:
    """Scale so the root-2 enlarged signer box has a diagonal of ``size`` pixels."""
    x, y, w, h = (float(v) for v in signer_box)
    if w <= 0 or h <= 0:
        raise InvalidArgumentError(f"signer box must have positive width and height, got {signer_box}")
    if size < 1:
        raise InvalidArgumentError("normalised size must be positive")
    enlarged_diag = math.sqrt(2.0) * math.hypot(w, h)
    scale = size / enlarged_diag
    cx, cy = x + w / 2 - 0.5, y + h / 2 - 0.5
    half = size / (2 * scale)
    return NormalizeTransform(scale, cx - half, cy - half, size)


def normalize_frames(frames, signer_box, size: int = 256) -> np.ndarray:
    """Resize by the signer-box factor and crop ``size`` x ``size`` around the box centre.

    Downscaling is preceded by a Gaussian anti-alias blur with
    ``sigma = (1 / scale - 1) / 2``. Area outside the frame is zero.

    Returns:
        [T, size, size, C] float array.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or len(frames) == 0:
        raise InvalidArgumentError(f"expected [T, H, W, C] frames, got shape {frames.shape}")
    tf = normalize_transform(signer_box, size)
    grid = (np.arange(size) + 0.5) / tf.scale
    ys, xs = np.meshgrid(tf.top + grid, tf.left + grid, indexing="ij")
    sigma = max(0.0, (1.0 / tf.scale - 1.0) / 2.0)
    out = np.empty((len(frames), size, size, frames.shape[3]))
    for t, frame in enumerate(frames):
        if sigma > 0:
            frame = gaussian_filter(frame, sigma=(sigma, sigma, 0), mode="nearest")
        out[t] = bilinear_sample(frame, xs, ys)
    return out

