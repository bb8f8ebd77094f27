"""Dense float64 tensors with reverse-mode differentiation.

Every op records a closure that maps the output gradient to input gradients.
Broadcasting is deliberately absent: elementwise ops demand identical shapes,
and the only broadcast anywhere is the per-channel bias/affine add.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgumentError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Iterable[Tensor], fn) -> Tensor:
    """Wrap an op result, recording ``fn`` only when some parent needs grad."""
    out = Tensor(data)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,))
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


# -- reductions and shape ----------------------------------------------------

def tensor_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = np.sum(a.data, axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), fn)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def pad(a: Tensor, widths: Sequence[tuple[int, int]], mode: str = "constant") -> Tensor:
    """Pad with zeros (``constant``) or by replicating border values (``edge``)."""
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != a.ndim:
        raise InvalidArgumentError(f"pad: need {a.ndim} width pairs, got {len(widths)}")
    if all(w == (0, 0) for w in widths):
        return a
    if mode not in ("constant", "edge"):
        raise InvalidArgumentError(f"pad: unknown mode {mode!r}")
    out = np.pad(a.data, widths, mode=mode)
    in_shape = a.shape

    def fn(g):
        if mode == "constant":
            sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, in_shape))
            return (g[sl].copy(),)
        # edge: fold the replicated borders back onto the border cells
        for ax, (lo, hi) in enumerate(widths):
            if lo == 0 and hi == 0:
                continue
            g = np.moveaxis(g, ax, 0)
            core = g[lo:g.shape[0] - hi].copy()
            core[0] += g[:lo].sum(axis=0)
            core[-1] += g[g.shape[0] - hi:].sum(axis=0)
            g = np.moveaxis(core, 0, ax)
        return (g,)

    return _make(out, (a,), fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_channel_bias(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a per-channel vector along ``axis``; the one sanctioned broadcast."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise InvalidArgumentError(
            f"bias of shape {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    return _make(x.data + bias.data.reshape(view), (x, bias),
                 lambda g: (g, g.sum(axis=reduce_axes)))


def node_mix(x: Tensor, adjacency: np.ndarray) -> Tensor:
    """Right-multiply the last (node) axis by a constant matrix: out[..., w] = sum_v x[..., v] A[v, w]."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != (x.shape[-1], x.shape[-1]):
        raise InvalidArgumentError(
            f"node_mix: adjacency {adjacency.shape} vs {x.shape[-1]} nodes")
    return _make(x.data @ adjacency, (x,), lambda g: (g @ adjacency.T,))


# -- reverse pass ------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise InvalidArgumentError("loss is not attached to any tensor requiring grad")
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
