"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-4,
               max_checks: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    The error per component is ``|a - n| / max(|a|, |n|, 1e-8)``.

    Args:
        fn: callable taking ``*inputs`` and returning a scalar tensor.
        inputs: tensors to differentiate; they are flagged ``requires_grad``.
        epsilon: central-difference half step.
        max_checks: if given, only this many randomly chosen components per
            input are probed (the analytic gradient is still computed in full).
        rng: generator for the component sample.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    loss = fn(*inputs)
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_checks is not None and flat.size > max_checks:
                idx = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + epsilon
                up = fn(*inputs).item()
                flat[i] = orig - epsilon
                down = fn(*inputs).item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * epsilon)
                ai = a.reshape(-1)[i]
                err = abs(ai - numeric) / max(abs(ai), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst
