"""Network operations on top of :mod:`msnn.tensor`.

conv3d and pool3d use strided window views; im2col buffers are built in
chunks so that a full-resolution forward stays inside a fixed memory budget.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, PropagationError
from .tensor import Tensor, _make, add_channel_bias, as_tensor, matmul, transpose

# max float64 elements held by one im2col chunk (~128 MB)
COL_BUDGET = 1 << 24


def _triple(value, name: str) -> tuple[int, int, int]:
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise InvalidArgumentError(f"{name} must have three components, got {value}")
    return value


def _out_extent(size: int, pad: int, k: int, s: int, axis: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise InvalidArgumentError(
            f"window {k} larger than padded input {size + 2 * pad} along {axis}")
    return span // s + 1


def _chunks(n: int, t_out: int, row_cost: int):
    """Yield (batch slice, t_out slice) blocks whose im2col stays under budget."""
    per_t = max(row_cost, 1)
    t_block = max(1, min(t_out, COL_BUDGET // per_t))
    n_block = max(1, COL_BUDGET // (per_t * t_out)) if t_block == t_out else 1
    for n0 in range(0, n, n_block):
        for t0 in range(0, t_out, t_block):
            yield slice(n0, min(n, n0 + n_block)), slice(t0, min(t_out, t0 + t_block))


def _windows(xp: np.ndarray, ksize, stride, t_sl: slice, t_count: int):
    """Strided [n, C, t', H', W', kt, kh, kw] view of the padded input for output times ``t_sl``."""
    kt, kh, kw = ksize
    st, sh, sw = stride
    lo = t_sl.start * st
    hi = (t_sl.stop - 1) * st + kt
    win = sliding_window_view(xp[:, :, lo:hi], (kt, kh, kw), axis=(2, 3, 4))
    return win[:, :, ::st, ::sh, ::sw][:, :, :t_count]


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """3D cross-correlation with zero padding.

    Args:
        x: input of shape [N, C, T, H, W].
        kernel: weights of shape [K, C, kt, kh, kw].
        bias: optional [K] vector.
        stride, padding: int or (t, h, w) triple.

    Returns:
        Tensor of shape [N, K, T', H', W'].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 5:
        raise InvalidArgumentError(f"conv3d: input must be 5-D [N,C,T,H,W], got {x.shape}")
    if kernel.ndim != 5:
        raise InvalidArgumentError(f"conv3d: kernel must be 5-D [K,C,kt,kh,kw], got {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise InvalidArgumentError(
            f"conv3d: channel dimension mismatch, kernel has {kernel.shape[1]} "
            f"input channels but input has {x.shape[1]}")
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if min(stride) < 1:
        raise InvalidArgumentError(f"conv3d: stride components must be >= 1, got {stride}")
    if min(padding) < 0:
        raise InvalidArgumentError(f"conv3d: padding must be >= 0, got {padding}")

    n, c, t, h, w = x.shape
    k_out = kernel.shape[0]
    ksize = kernel.shape[2:]
    dims = zip(("time", "height", "width"), (t, h, w), padding, ksize, stride)
    t_out, h_out, w_out = (_out_extent(sz, p, k, s, name) for name, sz, p, k, s in dims)
    pt, ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))) if any(padding) else x.data
    wmat = kernel.data.reshape(k_out, -1)
    ckv = wmat.shape[1]
    row_cost = h_out * w_out * ckv

    out = np.empty((n, k_out, t_out, h_out, w_out))
    for n_sl, t_sl in _chunks(n, t_out, row_cost):
        tc = t_sl.stop - t_sl.start
        win = _windows(xp[n_sl], ksize, stride, t_sl, tc)
        cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(-1, ckv)
        res = (cols @ wmat.T).reshape(win.shape[0], tc, h_out, w_out, k_out)
        out[n_sl, :, t_sl] = res.transpose(0, 4, 1, 2, 3)

    def fn(g):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wmat) if kernel.requires_grad else None
        kt, kh, kw = ksize
        st, sh, sw = stride
        for n_sl, t_sl in _chunks(n, t_out, row_cost):
            tc = t_sl.stop - t_sl.start
            gm = g[n_sl, :, t_sl].transpose(0, 2, 3, 4, 1).reshape(-1, k_out)
            if gw is not None:
                win = _windows(xp[n_sl], ksize, stride, t_sl, tc)
                cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(-1, ckv)
                gw += gm.T @ cols
            if gx is not None:
                nb = n_sl.stop - n_sl.start
                dcols = (gm @ wmat).reshape(nb, tc, h_out, w_out, c, kt, kh, kw)
                dcols = dcols.transpose(0, 4, 5, 6, 7, 1, 2, 3)
                base = t_sl.start * st
                for a in range(kt):
                    ts = slice(base + a, base + a + st * (tc - 1) + 1, st)
                    for b in range(kh):
                        hs = slice(b, b + sh * (h_out - 1) + 1, sh)
                        for d in range(kw):
                            ws = slice(d, d + sw * (w_out - 1) + 1, sw)
                            gx[n_sl, :, ts, hs, ws] += dcols[:, :, a, b, d]
        if gx is not None and any(padding):
            gx = gx[:, :, pt:pt + t, ph:ph + h, pw:pw + w]
        return (gx, None if gw is None else gw.reshape(kernel.shape))

    result = _make(out, (x, kernel), fn)
    if bias is not None:
        result = add_channel_bias(result, as_tensor(bias), axis=1)
    return result


def inflate_kernel(kernel2d, depth: int) -> Tensor:
    """Repeat a [K, C, kh, kw] kernel ``depth`` times along a new time axis, scaled by 1/depth.

    A temporally constant input then yields exactly the 2D response.
    """
    if int(depth) != depth or depth < 1:
        raise InvalidArgumentError(f"inflation depth must be >= 1, got {depth}")
    data = kernel2d.data if isinstance(kernel2d, Tensor) else np.asarray(kernel2d, dtype=np.float64)
    if data.ndim != 4:
        raise InvalidArgumentError(f"2D kernel must be 4-D [K,C,kh,kw], got {data.shape}")
    inflated = np.repeat(data[:, :, None] / depth, int(depth), axis=2)
    if isinstance(kernel2d, Tensor) and kernel2d.requires_grad:
        return _make(inflated, (kernel2d,), lambda g: (g.sum(axis=2) / depth,))
    return Tensor(inflated)


def pool3d(x: Tensor, window, stride=None, mode: str = "max", padding=0) -> Tensor:
    """Max or average pooling over (T, H, W).

    Max pooling pads with -inf, so padded cells never win. Average pooling
    divides by the full window volume. Gradient ties go to the first maximum.
    """
    x = as_tensor(x)
    if x.ndim != 5:
        raise InvalidArgumentError(f"pool3d: input must be 5-D, got {x.shape}")
    if mode not in ("max", "avg"):
        raise InvalidArgumentError(f"pool3d: unknown mode {mode!r}")
    window = _triple(window, "window")
    stride = window if stride is None else _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if min(stride) < 1 or min(window) < 1:
        raise InvalidArgumentError("pool3d: window and stride must be >= 1")
    n, c, t, h, w = x.shape
    dims = zip(("time", "height", "width"), (t, h, w), padding, window, stride)
    t_out, h_out, w_out = (_out_extent(sz, p, k, s, name) for name, sz, p, k, s in dims)
    pt, ph, pw = padding
    fill = -np.inf if mode == "max" else 0.0
    xp = (np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=fill)
          if any(padding) else x.data)
    win = _windows(xp, window, stride, slice(0, t_out), t_out)
    kt, kh, kw = window
    st, sh, sw = stride
    vol = kt * kh * kw
    flat = win.reshape(n, c, t_out, h_out, w_out, vol)
    if mode == "max":
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def fn(g):
        gx = np.zeros_like(xp)
        idx = 0
        for a in range(kt):
            ts = slice(a, a + st * (t_out - 1) + 1, st)
            for b in range(kh):
                hs = slice(b, b + sh * (h_out - 1) + 1, sh)
                for d in range(kw):
                    ws = slice(d, d + sw * (w_out - 1) + 1, sw)
                    if mode == "max":
                        gx[:, :, ts, hs, ws] += np.where(arg == idx, g, 0.0)
                    else:
                        gx[:, :, ts, hs, ws] += g / vol
                    idx += 1
        if any(padding):
            gx = gx[:, :, pt:pt + t, ph:ph + h, pw:pw + w]
        return (gx,)

    return _make(np.ascontiguousarray(out), (x,), fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average every axis after the channel axis: [N, C, ...] -> [N, C]."""
    n, c = x.shape[:2]
    count = int(np.prod(x.shape[2:]))
    return _make(x.data.reshape(n, c, -1).mean(axis=-1), (x,),
                 lambda g: (np.broadcast_to((g / count).reshape(n, c, *([1] * (x.ndim - 2))),
                                            x.shape).copy(),))


def _check_finite(data: np.ndarray, op: str) -> None:
    if np.isnan(data).any():
        raise PropagationError(f"{op}: NaN in input")


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    logits = as_tensor(logits)
    if logits.ndim == 0 or logits.shape[-1] < 1:
        raise InvalidArgumentError("softmax needs at least one class")
    _check_finite(logits.data, "softmax")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (logits,), fn)


def log_softmax(logits: Tensor) -> Tensor:
    logits = as_tensor(logits)
    _check_finite(logits.data, "log_softmax")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise InvalidArgumentError(f"cross_entropy expects [N, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError(f"labels must be {n} integer class indices")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise InvalidArgumentError(
            f"label {int(labels[bad[0]])} at position {int(bad[0])} outside [0, {c})")
    _check_finite(logits.data, "cross_entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def fn(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x [N, in] @ weight[out, in].T (+ bias)."""
    out = matmul(x, transpose(weight, (1, 0)))
    if bias is not None:
        out = add_channel_bias(out, bias, axis=1)
    return out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every axis but 1, followed by an affine map.

    In training mode batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    axes = tuple(i for i in range(x.ndim) if i != 1)
    view = [1] * x.ndim
    view[1] = -1
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.size // x.shape[1]
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (count / max(count - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(view)) * inv.reshape(view)
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)
    gd = gamma.data

    def fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd.reshape(view)
        if training:
            m = x.size // x.shape[1]
            dx = (inv.reshape(view) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(view)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(view))
        else:
            dx = dxhat * inv.reshape(view)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), fn)


def stack_batch(samples: Sequence[np.ndarray]) -> Tensor:
    return Tensor(np.stack([np.asarray(s, dtype=np.float64) for s in samples]))
