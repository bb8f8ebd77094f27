"""Coarse-to-fine TV-L1 optical flow (primal-dual), flow frames and the flow cache.

Intensities enter in [0, 1] and are rescaled by ``FlowParams.intensity_scale``
(255 by default) so that ``lambda`` keeps its customary 8-bit meaning.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, InvalidArgumentError
from .tensor import Tensor

log = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
FLOW_MAGIC = b"MSNNFLO1"


class PyramidWarning(UserWarning):
    """The requested pyramid was deeper than the image allows."""


@dataclass(frozen=True)
class FlowParams:
    lam: float = 0.15
    theta: float = 0.3
    tau: float = 0.125
    warps: int = 5
    pyramid_levels: int = 5
    scale_factor: float = 0.5
    max_iters: int = 30
    stop_epsilon: float = 0.01
    median_size: int = 3
    intensity_scale: float = 255.0

    def __post_init__(self):
        if not 0 < self.tau <= 0.125:
            raise InvalidArgumentError(f"tau must be in (0, 0.125], got {self.tau}")
        if not 0 < self.scale_factor < 1:
            raise InvalidArgumentError(f"scale_factor must be in (0, 1), got {self.scale_factor}")
        for name in ("warps", "pyramid_levels", "max_iters"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.lam <= 0 or self.theta <= 0 or self.stop_epsilon <= 0:
            raise InvalidArgumentError("lam, theta and stop_epsilon must be positive")


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise InvalidArgumentError("u and v must be 2-D arrays of equal shape")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @classmethod
    def zeros(cls, height: int, width: int) -> FlowField:
        return cls(np.zeros((height, width)), np.zeros((height, width)))


def to_grayscale(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.asarray(LUMA_WEIGHTS)


# -- discrete operators (forward differences / matching divergence) ---------

def _forward_gradient(f):
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def _divergence(px, py):
    div = np.zeros_like(px)
    div[:, 0] = px[:, 0]
    div[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    div[:, -1] = -px[:, -2] if px.shape[1] > 1 else 0.0
    div[0, :] += py[0, :]
    div[1:-1, :] += py[1:-1, :] - py[:-2, :]
    if py.shape[0] > 1:
        div[-1, :] += -py[-2, :]
    return div


def _warp(image, u, v):
    h, w = image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(image, [yy + v, xx + u], order=1, mode="nearest")


def _zoom_out(image, factor, shape):
    sigma = 0.6 * np.sqrt(1.0 / factor ** 2 - 1.0)
    smooth = ndimage.gaussian_filter(image, sigma, mode="nearest")
    return _resample(smooth, shape)


def _resample(image, shape):
    h, w = image.shape
    nh, nw = shape
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(image, [yy, xx], order=1, mode="nearest")


def tvl1_energy(i0, i1, u, v, lam) -> float:
    """Discrete TV-L1 energy: isotropic TV of each flow component plus lam * |residual|."""
    ux, uy = _forward_gradient(u)
    vx, vy = _forward_gradient(v)
    tv = np.sqrt(ux ** 2 + uy ** 2).sum() + np.sqrt(vx ** 2 + vy ** 2).sum()
    return float(tv + lam * np.abs(_warp(i1, u, v) - i0).sum())


def _solve_level(i0, i1, u, v, p: FlowParams):
    i1y, i1x = np.gradient(i1)
    lt = p.lam * p.theta
    taut = p.tau / p.theta
    p11 = np.zeros_like(u)
    p12 = np.zeros_like(u)
    p21 = np.zeros_like(u)
    p22 = np.zeros_like(u)
    energies = [tvl1_energy(i0, i1, u, v, p.lam)]
    iterations = 0
    for _ in range(p.warps):
        u_prev, v_prev = u.copy(), v.copy()
        i1w = _warp(i1, u, v)
        i1wx = _warp(i1x, u, v)
        i1wy = _warp(i1y, u, v)
        grad = i1wx ** 2 + i1wy ** 2
        rho_c = i1w - i1wx * u - i1wy * v - i0
        safe = grad > 1e-10
        inv_grad = np.where(safe, 1.0 / np.where(safe, grad, 1.0), 0.0)
        for _ in range(p.max_iters):
            iterations += 1
            rho = rho_c + i1wx * u + i1wy * v
            lo = rho < -lt * grad
            hi = rho > lt * grad
            step = np.where(lo, lt, np.where(hi, -lt, -rho * inv_grad))
            v1 = u + step * i1wx
            v2 = v + step * i1wy
            u_old, v_old = u, v
            u = v1 + p.theta * _divergence(p11, p12)
            v = v2 + p.theta * _divergence(p21, p22)
            ux, uy = _forward_gradient(u)
            vx, vy = _forward_gradient(v)
            ng1 = 1.0 + taut * np.sqrt(ux ** 2 + uy ** 2)
            ng2 = 1.0 + taut * np.sqrt(vx ** 2 + vy ** 2)
            p11 = (p11 + taut * ux) / ng1
            p12 = (p12 + taut * uy) / ng1
            p21 = (p21 + taut * vx) / ng2
            p22 = (p22 + taut * vy) / ng2
            if np.mean((u - u_old) ** 2 + (v - v_old) ** 2) < p.stop_epsilon ** 2:
                break
        energy = tvl1_energy(i0, i1, u, v, p.lam)
        if p.median_size > 1:
            um = ndimage.median_filter(u, size=p.median_size, mode="nearest")
            vm = ndimage.median_filter(v, size=p.median_size, mode="nearest")
            filtered = tvl1_energy(i0, i1, um, vm, p.lam)
            if filtered <= energy:
                u, v, energy = um, vm, filtered
        if energy > energies[-1]:
            # reject a warp that would raise the energy and stop refining this level
            u, v = u_prev, v_prev
            break
        energies.append(energy)
    return u, v, energies, iterations


def tvl1_flow(prev: np.ndarray, nxt: np.ndarray, params: FlowParams | None = None) -> FlowField:
    """Dense flow (u, v) such that ``nxt(x + u, y + v) ~ prev(x, y)``.

    Args:
        prev, nxt: grayscale (or RGB, converted with luma weights) images in [0, 1].
        params: solver settings; defaults to :class:`FlowParams`.

    Returns:
        FlowField with ``info['energies']`` (per level, coarse to fine, one
        entry per accepted warp) and ``info['levels']``.
    """
    p = params or FlowParams()
    i0 = to_grayscale(prev) * p.intensity_scale
    i1 = to_grayscale(nxt) * p.intensity_scale
    if i0.shape != i1.shape:
        raise InvalidArgumentError(f"image dimensions differ: {i0.shape} vs {i1.shape}")
    h, w = i0.shape
    levels = p.pyramid_levels
    messages = []
    if min(h, w) < 2 ** levels:
        levels = max(1, int(np.floor(np.log2(min(h, w)))))
        msg = f"{w}x{h} image too small for {p.pyramid_levels} pyramid levels; using {levels}"
        warnings.warn(msg, PyramidWarning)
        log.warning(msg)
        messages.append(msg)

    shapes = [(h, w)]
    pyr0, pyr1 = [i0], [i1]
    for _ in range(1, levels):
        ph, pw = shapes[-1]
        shape = (max(1, int(round(ph * p.scale_factor))), max(1, int(round(pw * p.scale_factor))))
        pyr0.append(_zoom_out(pyr0[-1], p.scale_factor, shape))
        pyr1.append(_zoom_out(pyr1[-1], p.scale_factor, shape))
        shapes.append(shape)

    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    all_energies, total_iters = [], 0
    for level in range(levels - 1, -1, -1):
        if u.shape != shapes[level]:
            (oh, ow), (nh, nw) = u.shape, shapes[level]
            u = _resample(u, (nh, nw)) * (nw / ow)
            v = _resample(v, (nh, nw)) * (nh / oh)
        u, v, energies, iters = _solve_level(pyr0[level], pyr1[level], u, v, p)
        all_energies.append(energies)
        total_iters += iters
    return FlowField(u, v, {"levels": levels, "energies": all_energies,
                            "iterations": total_iters, "warnings": messages})


def flow_to_frames(flows: Sequence[FlowField], clip_bound: float = 20.0) -> Tensor:
    """Stack flows into [2, M, H, W], clamped to +-clip_bound and scaled to [-1, 1]."""
    if clip_bound <= 0:
        raise InvalidArgumentError("clip_bound must be positive")
    flows = list(flows)
    if not flows:
        raise InvalidArgumentError("no flow fields given")
    u = np.stack([f.u for f in flows])
    v = np.stack([f.v for f in flows])
    out = np.stack([u, v]) / clip_bound
    return Tensor(np.clip(out, -1.0, 1.0))


# -- cache -------------------------------------------------------------------

def write_flow_cache(path, flows: Sequence[FlowField]) -> None:
    """Header ``MSNNFLO1`` + width, height, count (uint32 LE), then float32 u, v planes per frame."""
    flows = list(flows)
    if not flows:
        raise InvalidArgumentError("no flow fields to write")
    h, w = flows[0].u.shape
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC + struct.pack("<III", w, h, len(flows)))
        for f in flows:
            if f.u.shape != (h, w):
                raise InvalidArgumentError("all flow fields must share one size")
            fh.write(f.u.astype("<f4").tobytes())
            fh.write(f.v.astype("<f4").tobytes())


def read_flow_cache(path) -> list[FlowField]:
    raw = Path(path).read_bytes()
    header = len(FLOW_MAGIC) + 12
    if len(raw) < header or raw[:len(FLOW_MAGIC)] != FLOW_MAGIC:
        raise DataError(f"{path}: not a flow cache file")
    w, h, count = struct.unpack("<III", raw[len(FLOW_MAGIC):header])
    plane = w * h * 4
    if len(raw) != header + 2 * plane * count:
        raise DataError(f"{path}: truncated flow cache ({len(raw)} bytes)")
    data = np.frombuffer(raw, dtype="<f4", offset=header).reshape(count, 2, h, w)
    return [FlowField(fr[0].astype(np.float64), fr[1].astype(np.float64)) for fr in data]


def write_flow_ppm(path, flow: FlowField, clip_bound: float = 20.0) -> None:
    """Debug dump: u -> red, v -> green, both mapped from [-clip, clip] to [0, 255]."""
    rgb = np.full((flow.height, flow.width, 3), 128, dtype=np.uint8)
    for ch, comp in enumerate((flow.u, flow.v)):
        rgb[..., ch] = np.round((np.clip(comp / clip_bound, -1, 1) + 1) * 127.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6 {flow.width} {flow.height} 255\n".encode())
        fh.write(rgb.tobytes())
