"""Binary record encoding shared by checkpoints.

Layout: magic ``MSNNCKP1``, then two sections (model tensors, optimizer
state). Each section is a little-endian u32 record count followed by records
of ``u32 name_len, name (utf-8), u32 ndim, ndim x u64 dims, float64 data``.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

from ..errors import CorruptCheckpointError

MAGIC = b"MSNNCKP1"


def _write_section(fh: BinaryIO, records: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(records)))
    for name, array in records.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8", order="C")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.tobytes())


def encode_records(model_records: dict[str, np.ndarray], state_records: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_section(buf, model_records)
    _write_section(buf, state_records)
    return buf.getvalue()


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpointError(f"{self.source}: truncated at byte {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def section(self) -> dict[str, np.ndarray]:
        (count,) = struct.unpack("<I", self.take(4))
        records: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", self.take(4))
            try:
                name = self.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpointError(f"{self.source}: bad record name") from exc
            (ndim,) = struct.unpack("<I", self.take(4))
            shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(self.take(8 * size), dtype="<f8").reshape(shape)
            if name in records:
                raise CorruptCheckpointError(f"{self.source}: duplicate record {name}")
            records[name] = data.astype(np.float64)
        return records


def decode_records(blob: bytes, source: str = "checkpoint") -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Parse a whole checkpoint; raises CorruptCheckpointError on any inconsistency."""
    if blob[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{source}: bad magic")
    reader = _Reader(blob, source)
    reader.pos = len(MAGIC)
    model_records = reader.section()
    state_records = reader.section()
    if reader.pos != len(blob):
        raise CorruptCheckpointError(f"{source}: {len(blob) - reader.pos} trailing bytes")
    return model_records, state_records
