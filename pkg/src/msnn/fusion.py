"""Late fusion of per-stream softmax scores and the stream-composition ablation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LOCAL_STREAMS, STREAMS, ClipDataset, Dataset, PipelineConfig, load_manifest, prepare_dataset
from .errors import EmptyDatasetError, InvalidArgumentError, MissingArtifactError
from .metrics import stream_scores, top_n_accuracy
from .models import build_model, stream_model_config
from .training import TrainConfig, load_checkpoint, train_stream

log = logging.getLogger(__name__)

BASE_STREAMS = ("rgb", "flow")
PIPELINE_FILE = "pipeline.json"


@dataclass(frozen=True)
class StreamScores:
    """Softmax output of one stream: a [C] vector or a [N, C] matrix of rows."""

    stream: str
    probabilities: np.ndarray

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise InvalidArgumentError(f"unknown stream {self.stream!r}")
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim not in (1, 2) or p.shape[-1] == 0:
            raise InvalidArgumentError(f"scores must be [C] or [N, C], got shape {p.shape}")
        if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
            raise InvalidArgumentError(f"{self.stream}: probabilities must lie in [0, 1]")
        if np.abs(p.sum(axis=-1) - 1.0).max() > 1e-9:
            raise InvalidArgumentError(f"{self.stream}: probabilities must sum to 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def num_classes(self) -> int:
        return self.probabilities.shape[-1]


def _as_array(s) -> np.ndarray:
    return s.probabilities if isinstance(s, StreamScores) else np.asarray(s, dtype=np.float64)


def fuse(scores, average_base_first: bool = False) -> np.ndarray:
    """Unweighted mean of the active streams' score vectors (or matrices).

    Args:
        scores: ``StreamScores`` or plain arrays, all the same shape.
        average_base_first: average the rgb and flow scores into a single
            vote before the global mean. Needs ``StreamScores`` inputs; off by
            default, giving every sub-stream equal weight.

    Raises:
        InvalidArgumentError: empty input or mismatched shapes.
    """
    scores = list(scores)
    if not scores:
        raise InvalidArgumentError("fuse needs at least one stream")
    arrays = [_as_array(s) for s in scores]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise InvalidArgumentError(f"score shapes differ: {shape} vs {a.shape}")
    if average_base_first:
        if not all(isinstance(s, StreamScores) for s in scores):
            raise InvalidArgumentError("average_base_first needs StreamScores inputs")
        base = [a for s, a in zip(scores, arrays) if s.stream in BASE_STREAMS]
        rest = [a for s, a in zip(scores, arrays) if s.stream not in BASE_STREAMS]
        if len(base) > 1:
            arrays = [np.mean(base, axis=0)] + rest
    if all(np.array_equal(a, arrays[0]) for a in arrays[1:]):
        return arrays[0].copy()  # the mean of identical values, without rounding
    # sorting each entry's values makes the sum independent of the stream order
    return np.sort(np.stack(arrays), axis=0).sum(axis=0) / len(arrays)


def predict(fused) -> int | np.ndarray:
    """Highest-scoring class; ties go to the lowest index. Rows of a matrix are predicted independently."""
    fused = np.asarray(fused, dtype=np.float64)
    if fused.size == 0 or fused.ndim not in (1, 2) or fused.shape[-1] == 0:
        raise InvalidArgumentError("predict needs a nonempty score vector")
    if np.isnan(fused).any():
        raise InvalidArgumentError("scores contain NaN")
    winner = np.argmax(fused, axis=-1)  # argmax returns the first maximum
    return int(winner) if fused.ndim == 1 else winner


# -- ablation ---------------------------------------------------------------

_TABLE = (
    ("Baseline1", False, False, False),
    ("Baseline2", True, False, False),
    ("Ours1", False, True, False),
    ("Ours2", False, False, True),
    ("Ours3", False, True, True),
    ("Ours4", True, True, False),
    ("Ours5", True, False, True),
    ("Ours6", True, True, True),
)


@dataclass(frozen=True)
class AblationConfig:
    """Which streams join rgb: flow, the three local crops, the skeleton."""

    flow: bool = False
    local: bool = False
    skeleton: bool = False

    @property
    def name(self) -> str:
        for name, *flags in _TABLE:
            if tuple(flags) == (self.flow, self.local, self.skeleton):
                return name
        raise AssertionError("unreachable: every flag combination is named")

    @property
    def streams(self) -> tuple[str, ...]:
        streams = ["rgb"]
        if self.flow:
            streams.append("flow")
        if self.local:
            streams.extend(LOCAL_STREAMS)
        if self.skeleton:
            streams.append("skeleton")
        return tuple(streams)

    @classmethod
    def from_name(cls, name: str) -> AblationConfig:
        for row_name, *flags in _TABLE:
            if row_name.lower() == name.lower():
                return cls(*flags)
        raise InvalidArgumentError(f"unknown configuration {name!r}; expected one of {[r[0] for r in _TABLE]}")


ALL_ABLATIONS = tuple(AblationConfig(*flags) for _, *flags in _TABLE)


@dataclass
class AblationSettings:
    """How missing streams are trained and where artifacts live.

    ``model_overrides`` go to every I3D-lite config (e.g. a smaller stem
    kernel at desk scale); ``eval_only`` forbids training and requires every
    checkpoint to exist.
    """

    pipeline: PipelineConfig = field(default_factory=PipelineConfig.desk)
    epochs: int = 200
    batch_size: int = 8
    model_overrides: dict = field(default_factory=dict)
    eval_only: bool = False
    average_base_first: bool = False
    top_n: tuple[int, ...] = (1, 5, 10)


@dataclass
class AblationRow:
    name: str
    seed: int
    flow: bool
    local: bool
    skeleton: bool
    accuracy: dict[int, float]

    def as_dict(self) -> dict:
        row = {"name": self.name, "seed": self.seed, "flow": self.flow, "local": self.local,
               "skeleton": self.skeleton}
        row.update({f"top{n}": v for n, v in self.accuracy.items()})
        return row


def stream_dir(ckpt_dir, stream: str, seed: int | None = None) -> Path:
    """``<ckpt_dir>/<stream>``, or ``<ckpt_dir>/seed<S>/<stream>`` for multi-seed runs."""
    root = Path(ckpt_dir)
    return root / stream if seed is None else root / f"seed{seed}" / stream


def find_checkpoint(directory) -> Path | None:
    """The best-validation checkpoint, falling back to the last one."""
    for name in ("best.ckpt", "last.ckpt"):
        path = Path(directory) / name
        if path.exists():
            return path
    return None


def write_pipeline_config(directory, cfg: PipelineConfig) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / PIPELINE_FILE).write_text(json.dumps(asdict(cfg), sort_keys=True, indent=1) + "\n")


def read_pipeline_config(directory) -> PipelineConfig | None:
    path = Path(directory) / PIPELINE_FILE
    if not path.exists():
        return None
    return PipelineConfig(**json.loads(path.read_text()))


def stream_input_size(stream: str, cfg: PipelineConfig) -> int:
    return cfg.local_size if stream in LOCAL_STREAMS else cfg.input_size


class SplitCache:
    """Prepares each split of a dataset at most once."""

    def __init__(self, dataset: Dataset, cfg: PipelineConfig, cache_dir=None):
        self.dataset = dataset
        self.cfg = cfg
        self.cache_dir = cache_dir
        self._splits: dict[str, ClipDataset | None] = {}

    def get(self, split: str) -> ClipDataset | None:
        if split not in self._splits:
            entries = self.dataset.split(split)
            clips = prepare_dataset(self.dataset, self.cfg, cache_dir=self.cache_dir, entries=entries)
            self._splits[split] = ClipDataset(clips, self.cfg) if clips else None
        return self._splits[split]


def obtain_stream(stream: str, seed: int | None, ckpt_dir, splits: SplitCache, settings: AblationSettings):
    """Load the stream's checkpoint, training it first unless ``eval_only``.

    Raises:
        MissingArtifactError: ``eval_only`` and no checkpoint exists.
    """
    directory = stream_dir(ckpt_dir, stream, seed)
    path = find_checkpoint(directory)
    if path is None:
        if settings.eval_only:
            raise MissingArtifactError(f"no checkpoint for stream {stream!r} in {directory}")
        overrides = {} if stream == "skeleton" else dict(settings.model_overrides)
        cfg = stream_model_config(stream, splits.dataset.num_classes, stream_input_size(stream, settings.pipeline),
                                  seed=seed or 0, **overrides)
        train = TrainConfig(stream, epochs=settings.epochs, batch_size=settings.batch_size, seed=seed or 0)
        log.info("training %s (seed %s)", stream, seed)
        train_stream(build_model(cfg), splits.get("train"), train, val_data=splits.get("val"), out_dir=directory)
        write_pipeline_config(directory, settings.pipeline)
        path = find_checkpoint(directory)
    model, _, _ = load_checkpoint(path)
    return model


def run_ablation(manifest, ablations=ALL_ABLATIONS, seeds=(None,), ckpt_dir="checkpoints",
                 settings: AblationSettings | None = None, cache_dir=None) -> list[AblationRow]:
    """Fused test-split Top-N for every configuration and seed.

    Each stream is trained (or loaded) once per seed and shared by all the
    configurations that use it. A seed of ``None`` uses the single-run layout
    ``<ckpt_dir>/<stream>``.

    Raises:
        MissingArtifactError: eval-only mode and a required checkpoint is absent.
        EmptyDatasetError: the test split is empty.
    """
    settings = settings or AblationSettings()
    dataset = manifest if isinstance(manifest, Dataset) else load_manifest(manifest)
    ablations = list(ablations)
    needed = [s for s in STREAMS if any(s in a.streams for a in ablations)]
    splits = SplitCache(dataset, settings.pipeline, cache_dir)
    rows = []
    for seed in seeds:
        if settings.eval_only:
            # fail on a missing artifact before doing any preprocessing
            for stream in needed:
                if find_checkpoint(stream_dir(ckpt_dir, stream, seed)) is None:
                    raise MissingArtifactError(f"no checkpoint for stream {stream!r} in {stream_dir(ckpt_dir, stream, seed)}")
        test = splits.get("test")
        if test is None:
            raise EmptyDatasetError("the test split is empty")
        scores = {}
        for stream in needed:
            model = obtain_stream(stream, seed, ckpt_dir, splits, settings)
            scores[stream] = StreamScores(stream, stream_scores(model, test, stream))
        for abl in ablations:
            fused = fuse([scores[s] for s in abl.streams], settings.average_base_first)
            acc = {n: top_n_accuracy(fused, test.labels, min(n, dataset.num_classes)) for n in settings.top_n}
            rows.append(AblationRow(abl.name, -1 if seed is None else seed, abl.flow, abl.local, abl.skeleton, acc))
            log.info("%s seed %s: %s", abl.name, seed, acc)
    return rows


def mean_accuracy(rows: list[AblationRow], name: str, n: int = 1) -> float:
    """Average Top-``n`` of configuration ``name`` over its seeds."""
    values = [r.accuracy[n] for r in rows if r.name == name]
    return math.fsum(values) / len(values) if values else float("nan")
