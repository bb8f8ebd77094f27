"""Manifest CSV parsing and per-split class histograms."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError, EmptyDatasetError, ManifestParseError

FIELDS = ["video_path", "keypoints_path", "box_x", "box_y", "box_w", "box_h", "label", "split", "signer_id"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    """One video. Paths are stored resolved against the manifest directory.

    ``signer_box`` is ``(x, y, w, h)``: the box covers pixel columns ``x`` to
    ``x + w - 1`` and rows ``y`` to ``y + h - 1``.
    """

    video_path: Path
    keypoints_path: Path
    signer_box: tuple[float, float, float, float]
    label: int
    split: str
    signer_id: str
    index: int = 0


@dataclass
class Dataset:
    entries: list[ManifestEntry]
    num_classes: int
    root: Path
    histograms: dict[str, list[int]] = field(default_factory=dict)

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def __len__(self) -> int:
        return len(self.entries)


def class_histograms(entries, num_classes: int) -> dict[str, list[int]]:
    hist = {s: [0] * num_classes for s in SPLITS}
    for e in entries:
        hist[e.split][e.label] += 1
    return hist


def _parse_row(row: dict, lineno: int, root: Path, index: int, num_classes: int | None) -> ManifestEntry:
    try:
        box = tuple(float(row[k]) for k in ("box_x", "box_y", "box_w", "box_h"))
    except (TypeError, ValueError) as exc:
        raise ManifestParseError(lineno, f"bad signer box: {exc}") from exc
    if box[2] <= 0 or box[3] <= 0:
        raise ManifestParseError(lineno, f"signer box must have positive size, got {box}")
    try:
        label = int(row["label"])
    except (TypeError, ValueError):
        raise ManifestParseError(lineno, f"label {row['label']!r} is not an integer") from None
    if label < 0 or (num_classes is not None and label >= num_classes):
        raise ManifestParseError(lineno, f"label {label} outside [0, {num_classes})")
    split = (row["split"] or "").strip()
    if split not in SPLITS:
        raise ManifestParseError(lineno, f"split {split!r} is not one of {SPLITS}")
    if not row["video_path"] or not row["keypoints_path"]:
        raise ManifestParseError(lineno, "empty path")
    return ManifestEntry(root / row["video_path"], root / row["keypoints_path"], box, label,
                         split, row["signer_id"] or "", index)


def load_manifest(path, num_classes: int | None = None, check_files: bool = True) -> Dataset:
    """Parse and validate a manifest.

    Args:
        path: CSV with header ``video_path,keypoints_path,box_x,box_y,box_w,box_h,label,split,signer_id``.
        num_classes: if given, labels must lie below it; otherwise it is
            inferred as ``max(label) + 1``.
        check_files: verify every referenced video directory and keypoint file exists.

    Raises:
        ManifestParseError: a malformed row (message carries the line number).
        EmptyDatasetError: no rows.
        FileNotFoundError: referenced files are missing (all of them are listed).
    """
    path = Path(path)
    root = path.parent
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyDatasetError(f"{path}: manifest is empty")
        missing_cols = [c for c in FIELDS if c not in reader.fieldnames]
        if missing_cols:
            raise ManifestParseError(1, f"missing columns {missing_cols}")
        entries = [_parse_row(row, lineno, root, i, num_classes)
                   for i, (lineno, row) in enumerate(((reader.line_num, r) for r in reader))]
    if not entries:
        raise EmptyDatasetError(f"{path}: manifest has no rows")
    if check_files:
        missing = [str(p) for e in entries for p in (e.video_path, e.keypoints_path) if not p.exists()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} referenced paths are missing: " + ", ".join(missing))
    if num_classes is None:
        num_classes = max(e.label for e in entries) + 1
    return Dataset(entries, num_classes, root, class_histograms(entries, num_classes))


def write_manifest(path, rows: list[dict]) -> None:
    """Write manifest rows (dicts keyed by FIELDS) with the standard header."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in FIELDS})


def split_counts(dataset: Dataset) -> dict[int, tuple[int, int, int]]:
    """Per-class ``(train, val, test)`` counts."""
    counts = Counter((e.label, e.split) for e in dataset.entries)
    return {c: tuple(counts[(c, s)] for s in SPLITS) for c in range(dataset.num_classes)}
