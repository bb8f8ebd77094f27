"""Top-N accuracy and per-stream score extraction."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import ops
from .errors import InvalidArgumentError
from .tensor import Tensor, no_grad


def label_ranks(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of each true label; ties go to the lower class index.

    A class outranks the label when its score is higher, or equal with a
    smaller index, which is the same rule ``predict`` uses.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = scores.shape
    own = scores[np.arange(n), labels][:, None]
    idx = np.arange(c)[None, :]
    return ((scores > own) | ((scores == own) & (idx < labels[:, None]))).sum(axis=1)


def top_n_accuracy(scores, labels, n: int) -> float:
    """Fraction of rows whose true label is among the ``n`` best-ranked classes."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise InvalidArgumentError(f"scores must be [samples, classes], got shape {scores.shape}")
    num_classes = scores.shape[1]
    if n < 1:
        raise InvalidArgumentError(f"N must be >= 1, got {n}")
    if n > num_classes:
        raise InvalidArgumentError(f"N={n} exceeds the number of classes ({num_classes})")
    if labels.shape != (scores.shape[0],):
        raise InvalidArgumentError("one label per score row is required")
    if len(labels) == 0:
        raise InvalidArgumentError("no samples to score")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidArgumentError("labels outside [0, num_classes)")
    if np.isnan(scores).any():
        raise InvalidArgumentError("scores contain NaN")
    return float((label_ranks(scores, labels) < n).mean())


def stream_scores(model, data, stream: str, batch_size: int = 16) -> np.ndarray:
    """Softmax probabilities [N, C] for every clip of ``data``, evaluated in eval mode.

    Clips use all their frames (centre crop, no flip); clips of equal length
    are batched together.
    """
    was_training = model.training
    model.eval()
    min_frames = getattr(model, "min_frames", 1)
    by_length: dict[int, list[int]] = defaultdict(list)
    inputs = {}
    for i in range(len(data)):
        x = data.eval_input(i, stream, min_frames)
        inputs[i] = x
        by_length[x.shape[2]].append(i)
    probs = np.zeros((len(data), model.cfg.num_classes))
    try:
        with no_grad():
            for length in sorted(by_length):
                members = by_length[length]
                for start in range(0, len(members), batch_size):
                    chunk = members[start:start + batch_size]
                    x = np.concatenate([inputs[i] for i in chunk])
                    probs[chunk] = ops.softmax(model(Tensor(x))).data
    finally:
        model.train(was_training)
    return probs
