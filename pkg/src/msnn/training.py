"""Adam, per-stream training loops, checkpoints and history logging."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .data.clips import STREAMS
from .errors import CorruptCheckpointError, DivergenceError, EmptyDatasetError, InvalidArgumentError
from .metrics import stream_scores, top_n_accuracy
from .models import ModelConfig, Module, build_model, decode_records, encode_records
from .tensor import Tensor

log = logging.getLogger(__name__)

I3D_DEFAULTS = (1e-3, 1e-7)
SKELETON_DEFAULTS = (0.01, 1e-4)
HISTORY_FIELDS = ["epoch", "train_loss", "val_top1", "val_top5", "seconds"]


@dataclass
class OptimizerState:
    """Adam moments per parameter name plus the step counter and hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def create(cls, params: dict, lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, epsilon: float = 1e-8) -> OptimizerState:
        zeros = {n: np.zeros(np.shape(_array(p))) for n, p in params.items()}
        return cls({n: z.copy() for n, z in zeros.items()}, zeros, 0, lr, beta1, beta2, epsilon, weight_decay)

    _SCALARS = ("step", "lr", "beta1", "beta2", "epsilon", "weight_decay")

    def to_records(self) -> dict[str, np.ndarray]:
        records = {name: np.array(float(getattr(self, name))) for name in self._SCALARS}
        records.update({f"m/{n}": a for n, a in self.m.items()})
        records.update({f"v/{n}": a for n, a in self.v.items()})
        return records

    @classmethod
    def from_records(cls, records: dict[str, np.ndarray]) -> OptimizerState:
        try:
            scalars = {name: float(records[name]) for name in cls._SCALARS}
        except KeyError as exc:
            raise CorruptCheckpointError(f"optimizer state lacks {exc}") from None
        m = {k[2:]: a.copy() for k, a in records.items() if k.startswith("m/")}
        v = {k[2:]: a.copy() for k, a in records.items() if k.startswith("v/")}
        if m.keys() != v.keys():
            raise CorruptCheckpointError("optimizer moments do not pair up")
        scalars["step"] = int(scalars["step"])
        return cls(m, v, **scalars)


def _array(p):
    return p.data if isinstance(p, Tensor) else p


def adam_step(params: dict, grads: dict, state: OptimizerState) -> OptimizerState:
    """One Adam update with classic L2 weight decay (``g + wd * p``), in place.

    Args:
        params: name -> Tensor or ndarray, updated in place.
        grads: name -> gradient array; a missing or ``None`` entry counts as zero.
        state: moments, updated in place and returned.

    Raises:
        DivergenceError: a gradient contains NaN or inf; names the parameter.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        if state.m[name].shape != np.shape(_array(p)):
            raise InvalidArgumentError(f"moment shape mismatch for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        data = _array(p)
        g = grads.get(name)
        g = np.zeros_like(data) if g is None else np.asarray(g, dtype=np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * data
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {n: None if g is None else g * scale for n, g in grads.items()}


@dataclass
class TrainConfig:
    """Per-stream training settings. ``lr``/``weight_decay`` default by stream kind.

    ``stop_at_train_top1`` ends training once eval-mode train Top-1 reaches the
    given fraction (off by default). ``log_wall_time`` writes real epoch
    durations into the history CSV; it is off by default so that identical
    runs produce identical files.
    """

    stream: str
    lr: float | None = None
    weight_decay: float | None = None
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    clip_norm: float | None = None
    augment: bool = True
    stop_at_train_top1: float | None = None
    log_wall_time: bool = False

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise InvalidArgumentError(f"stream must be one of {STREAMS}, got {self.stream!r}")
        default_lr, default_wd = SKELETON_DEFAULTS if self.stream == "skeleton" else I3D_DEFAULTS
        if self.lr is None:
            self.lr = default_lr
        if self.weight_decay is None:
            self.weight_decay = default_wd
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise InvalidArgumentError("lr and weight_decay must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_top1: float
    val_top5: float
    seconds: float
    train_top1: float = float("nan")


@dataclass
class TrainResult:
    model: Module
    state: OptimizerState
    history: list[EpochRecord] = field(default_factory=list)
    best_val_top1: float = float("-inf")


# -- checkpoints -------------------------------------------------------------

def _model_records(model: Module) -> dict[str, np.ndarray]:
    records = {f"param/{n}": p.data for n, p in model.parameters().items()}
    records.update({f"buffer/{n}": b for n, b in model.named_buffers()})
    return records


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_checkpoint(path, model: Module, state: OptimizerState | None = None,
                    meta: dict[str, float] | None = None, stream: str | None = None) -> None:
    """Write parameters, buffers and optimizer state; the model config goes to ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state_records = state.to_records() if state is not None else {}
    state_records.update({f"meta/{k}": np.array(float(v)) for k, v in (meta or {}).items()})
    blob = encode_records(_model_records(model), state_records)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    sidecar = {"model": model.cfg.to_dict(), "stream": stream}
    _sidecar(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path, model: Module | None = None):
    """Read a checkpoint back.

    Returns ``(model, state, meta)``; ``state`` is ``None`` when none was
    stored. Without ``model`` the network is rebuilt from the sidecar config.
    Nothing is modified unless every record matches the model exactly.
    """
    path = Path(path)
    blob = path.read_bytes()
    model_records, state_records = decode_records(blob, str(path))
    if model is None:
        try:
            sidecar = json.loads(_sidecar(path).read_text())
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise CorruptCheckpointError(f"{path}: model config sidecar unreadable ({exc})") from exc
        model = build_model(ModelConfig.from_dict(sidecar["model"]))
    targets = {f"param/{n}": p.data for n, p in model.parameters().items()}
    targets.update({f"buffer/{n}": b for n, b in model.named_buffers()})
    if targets.keys() != model_records.keys():
        missing = sorted(targets.keys() - model_records.keys())
        extra = sorted(model_records.keys() - targets.keys())
        raise CorruptCheckpointError(f"{path}: records do not match the model (missing {missing[:3]}, extra {extra[:3]})")
    for name, array in model_records.items():
        if targets[name].shape != array.shape:
            raise CorruptCheckpointError(f"{path}: {name} has shape {array.shape}, model expects {targets[name].shape}")
    meta = {k[5:]: float(a) for k, a in state_records.items() if k.startswith("meta/")}
    opt = {k: a for k, a in state_records.items() if not k.startswith("meta/")}
    state = OptimizerState.from_records(opt) if opt else None
    if state is not None and set(state.m) != set(model.parameters()):
        raise CorruptCheckpointError(f"{path}: optimizer moments do not match the parameters")
    for name, array in model_records.items():
        targets[name][...] = array
    return model, state, meta


# -- history -----------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def write_history(path, history: list[EpochRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)
        for r in history:
            writer.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.val_top1), _fmt(r.val_top5), _fmt(r.seconds)])


def read_history(path) -> list[EpochRecord]:
    with Path(path).open(newline="") as fh:
        return [EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_top1"]),
                            float(row["val_top5"]), float(row["seconds"]))
                for row in csv.DictReader(fh)]


# -- training loop -----------------------------------------------------------

def evaluate_top(model: Module, data, stream: str) -> tuple[float, float]:
    """(Top-1, Top-min(5, C)) of ``model`` on ``data``."""
    probs = stream_scores(model, data, stream)
    c = probs.shape[1]
    return top_n_accuracy(probs, data.labels, 1), top_n_accuracy(probs, data.labels, min(5, c))


def train_stream(model: Module, train_data, cfg: TrainConfig, val_data=None, out_dir=None,
                 resume: bool = False) -> TrainResult:
    """Train one stream with Adam on cross-entropy.

    Epoch ``e`` (1-based) draws its shuffling and augmentation from
    ``(cfg.seed, e)`` only, so a run resumed after epoch ``k`` continues exactly
    as an uninterrupted one would.

    With ``out_dir`` the loop writes ``history.csv``, ``last.ckpt`` after every
    epoch and ``best.ckpt`` whenever validation Top-1 improves.

    Raises:
        EmptyDatasetError: no training clips.
        DivergenceError: the loss or a gradient became NaN (message names epoch and batch).
    """
    if train_data is None or len(train_data) == 0:
        raise EmptyDatasetError(f"no training clips for stream {cfg.stream!r}")
    out_dir = Path(out_dir) if out_dir is not None else None
    state = OptimizerState.create(model.parameters(), cfg.lr, cfg.weight_decay)
    result = TrainResult(model, state)
    start_epoch = 1
    if resume and out_dir is not None and (out_dir / "last.ckpt").exists():
        _, loaded, meta = load_checkpoint(out_dir / "last.ckpt", model)
        result.state = state = loaded
        start_epoch = int(meta["epoch"]) + 1
        result.best_val_top1 = meta.get("best_val_top1", float("-inf"))
        result.history = [r for r in read_history(out_dir / "history.csv") if r.epoch < start_epoch]
        log.info("resuming %s at epoch %d", cfg.stream, start_epoch)
    params = model.parameters()
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for b, (x, y) in enumerate(train_data.train_batches(cfg.stream, cfg.seed, epoch, cfg.batch_size, cfg.augment)):
            logits = model(Tensor(x))
            loss = ops.cross_entropy(logits, y)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"{cfg.stream}: loss is {loss.item()} at epoch {epoch}, batch {b}")
            model.zero_grad()
            loss.backward()
            grads = {n: p.grad for n, p in params.items()}
            if cfg.clip_norm is not None:
                grads = clip_gradients(grads, cfg.clip_norm)
            try:
                adam_step(params, grads, state)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {b}") from None
            total += loss.item() * len(y)
            count += len(y)
        val1 = val5 = float("nan")
        if val_data is not None and len(val_data):
            val1, val5 = evaluate_top(model, val_data, cfg.stream)
        train1 = float("nan")
        if cfg.stop_at_train_top1 is not None:
            train1 = evaluate_top(model, train_data, cfg.stream)[0]
        seconds = time.perf_counter() - t0
        record = EpochRecord(epoch, total / count, val1, val5, seconds if cfg.log_wall_time else 0.0, train1)
        result.history.append(record)
        log.info("%s epoch %d loss %.4f val_top1 %.3f train_top1 %.3f (%.1fs)",
                 cfg.stream, epoch, record.train_loss, val1, train1, seconds)
        improved = not math.isnan(val1) and val1 > result.best_val_top1
        if improved:
            result.best_val_top1 = val1
        if out_dir is not None:
            meta = {"epoch": epoch, "best_val_top1": result.best_val_top1}
            if improved:
                save_checkpoint(out_dir / "best.ckpt", model, state, meta, cfg.stream)
            save_checkpoint(out_dir / "last.ckpt", model, state, meta, cfg.stream)
            write_history(out_dir / "history.csv", result.history)
        if cfg.stop_at_train_top1 is not None and train1 >= cfg.stop_at_train_top1:
            break
    return result
