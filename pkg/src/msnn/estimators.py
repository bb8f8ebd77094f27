"""scikit-learn style wrappers: preprocess manifests, fit streams, fuse their scores.

``X`` is always a sequence of ``PreparedClip`` (as produced by
``ClipPreprocessor.transform``); ``y`` defaults to the labels the clips carry.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import LOCAL_STREAMS, STREAMS, ClipDataset, ManifestEntry, PipelineConfig, PreparedClip, prepare_dataset
from .data.manifest import Dataset
from .errors import EmptyDatasetError, InvalidArgumentError
from .fusion import StreamScores, fuse, predict
from .metrics import stream_scores
from .models import build_model, stream_model_config
from .training import TrainConfig, train_stream


def check_clips(X, y=None) -> tuple[list[PreparedClip], np.ndarray]:
    """Validate a clip sequence and return it with integer labels.

    Raises:
        EmptyDatasetError: ``X`` is empty.
        InvalidArgumentError: an element is not a ``PreparedClip`` or ``y`` has the wrong length.
    """
    clips = list(X)
    if not clips:
        raise EmptyDatasetError("no clips given")
    bad = [type(c).__name__ for c in clips if not isinstance(c, PreparedClip)]
    if bad:
        raise InvalidArgumentError(f"expected PreparedClip items, got {sorted(set(bad))}")
    if y is None:
        labels = np.array([c.label for c in clips])
    else:
        labels = np.asarray(y)
        if labels.shape != (len(clips),):
            raise InvalidArgumentError(f"y must have one label per clip ({len(clips)}), got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer) or (labels < 0).any():
            raise InvalidArgumentError("labels must be non-negative integers")
    return clips, labels.astype(np.int64)


def check_stream(stream: str) -> str:
    if stream not in STREAMS:
        raise InvalidArgumentError(f"stream must be one of {STREAMS}, got {stream!r}")
    return stream


def _relabel(clips: list[PreparedClip], labels: np.ndarray) -> list[PreparedClip]:
    out = []
    for clip, label in zip(clips, labels):
        if clip.label != label:
            clip = PreparedClip(clip.rgb, clip.flow, clip.left_hand, clip.right_hand, clip.face, clip.skeleton,
                                int(label))
        out.append(clip)
    return out


class ClipPreprocessor(BaseEstimator, TransformerMixin):
    """Turns manifest entries into prepared clips (normalised frames, flow, crops, skeleton feature).

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(self, input_size: int = 224, clip_length: int = 64, cache_dir=None):
        self.input_size = input_size
        self.clip_length = clip_length
        self.cache_dir = cache_dir

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig.desk(input_size=self.input_size, clip_length=self.clip_length)

    def fit(self, X=None, y=None):
        self.pipeline_ = self.pipeline_config()
        return self

    def transform(self, X: Sequence[ManifestEntry]) -> list[PreparedClip]:
        check_is_fitted(self, "pipeline_")
        entries = list(X)
        if not all(isinstance(e, ManifestEntry) for e in entries):
            raise InvalidArgumentError("transform expects ManifestEntry items")
        if not entries:
            return []
        dataset = Dataset(entries, max(e.label for e in entries) + 1, entries[0].video_path.parent)
        return prepare_dataset(dataset, self.pipeline_, cache_dir=self.cache_dir, entries=entries)


class StreamClassifier(BaseEstimator, ClassifierMixin):
    """One stream's network trained with Adam on prepared clips.

    Args:
        stream: which modality to learn from.
        num_classes: defaults to ``max(y) + 1`` at fit time.
        epochs, batch_size, lr, weight_decay, seed: training settings; lr and
            weight decay default by stream kind.
        input_size, clip_length: pipeline sizes; they must match the
            preprocessor that produced the clips.
        model_overrides: extra ``ModelConfig`` fields for the network.
    """

    def __init__(self, stream: str = "rgb", num_classes: int | None = None, epochs: int = 200,
                 batch_size: int = 8, lr: float | None = None, weight_decay: float | None = None, seed: int = 0,
                 input_size: int = 224, clip_length: int = 64, model_overrides: dict | None = None):
        self.stream = stream
        self.num_classes = num_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.input_size = input_size
        self.clip_length = clip_length
        self.model_overrides = model_overrides

    def _pipeline(self) -> PipelineConfig:
        return PipelineConfig.desk(input_size=self.input_size, clip_length=self.clip_length)

    def fit(self, X, y=None, X_val=None):
        check_stream(self.stream)
        clips, labels = check_clips(X, y)
        num_classes = self.num_classes or int(labels.max()) + 1
        if labels.max() >= num_classes:
            raise InvalidArgumentError(f"label {labels.max()} outside [0, {num_classes})")
        cfg = self._pipeline()
        size = cfg.local_size if self.stream in LOCAL_STREAMS else cfg.input_size
        overrides = {} if self.stream == "skeleton" else dict(self.model_overrides or {})
        model = build_model(stream_model_config(self.stream, num_classes, size, seed=self.seed, **overrides))
        train_cfg = TrainConfig(self.stream, lr=self.lr, weight_decay=self.weight_decay, epochs=self.epochs,
                                batch_size=self.batch_size, seed=self.seed)
        val = ClipDataset(check_clips(X_val)[0], cfg) if X_val is not None else None
        result = train_stream(model, ClipDataset(_relabel(clips, labels), cfg), train_cfg, val_data=val)
        self.model_ = result.model
        self.history_ = result.history
        self.classes_ = np.arange(num_classes)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        clips, _ = check_clips(X)
        return stream_scores(self.model_, ClipDataset(clips, self._pipeline()), self.stream)

    def predict(self, X) -> np.ndarray:
        return predict(self.predict_proba(X))


class LateFusionClassifier(BaseEstimator, ClassifierMixin):
    """Averages the softmax outputs of independently trained ``StreamClassifier`` s.

    Args:
        estimators: one unfitted ``StreamClassifier`` per active stream.
        average_base_first: fuse rgb and flow into one vote before the global mean.
    """

    def __init__(self, estimators: Sequence[StreamClassifier] = (), average_base_first: bool = False):
        self.estimators = estimators
        self.average_base_first = average_base_first

    def fit(self, X, y=None, X_val=None):
        if not self.estimators:
            raise InvalidArgumentError("at least one stream estimator is required")
        streams = [e.stream for e in self.estimators]
        if len(set(streams)) != len(streams):
            raise InvalidArgumentError(f"duplicate streams in {streams}")
        clips, labels = check_clips(X, y)
        self.estimators_ = [e.__class__(**e.get_params()).fit(clips, labels, X_val) for e in self.estimators]
        num_classes = {len(e.classes_) for e in self.estimators_}
        if len(num_classes) != 1:
            raise InvalidArgumentError("stream estimators disagree on the number of classes")
        self.classes_ = self.estimators_[0].classes_
        return self

    def stream_scores(self, X) -> list[StreamScores]:
        check_is_fitted(self, "estimators_")
        return [StreamScores(e.stream, e.predict_proba(X)) for e in self.estimators_]

    def predict_proba(self, X) -> np.ndarray:
        return fuse(self.stream_scores(X), self.average_base_first)

    def predict(self, X) -> np.ndarray:
        return predict(self.predict_proba(X))
