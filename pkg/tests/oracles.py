"""Slow reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def conv3d_loops(x, k, b, stride, pad):
    n, c, t, h, w = x.shape
    ko, _, kt, kh, kw = k.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    xp = np.zeros((n, c, t + 2 * pt, h + 2 * ph, w + 2 * pw))
    xp[:, :, pt:pt + t, ph:ph + h, pw:pw + w] = x
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, ko, to, ho, wo))
    for i, o, a, p, q in itertools.product(range(n), range(ko), range(to), range(ho), range(wo)):
        acc = b[o]
        for ci, da, db, dc in itertools.product(range(c), range(kt), range(kh), range(kw)):
            acc += xp[i, ci, a * st + da, p * sh + db, q * sw + dc] * k[o, ci, da, db, dc]
        out[i, o, a, p, q] = acc
    return out


def conv2d_loops(x, k, b, stride=(1, 1), pad=(0, 0)):
    """x [N,C,H,W], k [K,C,kh,kw]; loop over kernel offsets, vectorised over positions."""
    n, c, h, w = x.shape
    ko, _, kh, kw = k.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + w] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, ko, ho, wo)) + b.reshape(1, -1, 1, 1)
    for db in range(kh):
        for dc in range(kw):
            patch = xp[:, :, db:db + sh * (ho - 1) + 1:sh, dc:dc + sw * (wo - 1) + 1:sw]
            out += np.einsum("nchw,kc->nkhw", patch, k[:, :, db, dc])
    return out


def maxpool2d_loops(x, window, stride, pad):
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    ph, pw = pad
    xp = np.full((n, c, h + 2 * ph, w + 2 * pw), -np.inf)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.full((n, c, ho, wo), -np.inf)
    for db in range(kh):
        for dc in range(kw):
            out = np.maximum(out, xp[:, :, db:db + sh * (ho - 1) + 1:sh, dc:dc + sw * (wo - 1) + 1:sw])
    return out


def pool3d_loops(x, window, stride, mode):
    n, c, t, h, w = x.shape
    kt, kh, kw = window
    st, sh, sw = stride
    to, ho, wo = (t - kt) // st + 1, (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((n, c, to, ho, wo))
    for i, ci, a, p, q in itertools.product(range(n), range(c), range(to), range(ho), range(wo)):
        block = x[i, ci, a * st:a * st + kt, p * sh:p * sh + kh, q * sw:q * sw + kw]
        out[i, ci, a, p, q] = block.max() if mode == "max" else block.sum() / block.size
    return out


def cross_entropy_direct(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def batch_norm_eval(x, bn):
    view = (1, -1) + (1,) * (x.ndim - 2)
    mean = bn._buffers["running_mean"].reshape(view)
    var = bn._buffers["running_var"].reshape(view)
    return (x - mean) / np.sqrt(var + bn.eps) * bn.gamma.data.reshape(view) + bn.beta.data.reshape(view)


def i3d_2d_oracle(model, frame):
    """Evaluate the 2D network an eval-mode I3D-lite collapses to on a static clip.

    ``frame`` is [N, C, H, W]. Every inflated kernel is summed over time and
    applied with the loop convolution; pools drop their temporal extent.
    """
    from msnn.models.base import MaxPool3d, Unit3D
    from msnn.models.i3d import Inception

    def unit(x, u):
        k2 = u.weight.data.sum(axis=2)
        kh, kw = u.kernel[1:]
        y = conv2d_loops(x, k2, u.bias.data, u.stride[1:], (kh // 2, kw // 2))
        y = batch_norm_eval(y, u.bn)
        return np.maximum(y, 0.0) if u.activation else y

    def pool(x, p):
        return maxpool2d_loops(x, p.window[1:], p.stride[1:], tuple(k // 2 for k in p.window[1:]))

    x = frame
    for layer in model.layers:
        if isinstance(layer, Unit3D):
            x = unit(x, layer)
        elif isinstance(layer, MaxPool3d):
            x = pool(x, layer)
        elif isinstance(layer, Inception):
            x = np.concatenate([
                unit(x, layer.branch0),
                unit(unit(x, layer.branch1a), layer.branch1b),
                unit(unit(x, layer.branch2a), layer.branch2b),
                unit(pool(x, layer.branch3pool), layer.branch3),
            ], axis=1)
        else:
            raise TypeError(f"oracle does not know {type(layer).__name__}")
    feat = x.mean(axis=(2, 3))
    return feat @ model.head.weight.data.T + model.head.bias.data


def sort_rank_top_n(scores, labels, n):
    """Top-n by explicitly sorting each row: score descending, class index ascending on ties."""
    hits = 0
    for row, label in zip(scores, labels):
        order = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits += label in order[:n]
    return hits / len(labels)
