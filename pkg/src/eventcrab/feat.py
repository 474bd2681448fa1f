"""The FEAT matrix container: b"FEAT", u32 rows, u32 dim, then f32 row-major values (little-endian)."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FEAT"
_HEAD = struct.Struct("<4sII")


class FeatureFileError(ValueError):
    pass


def dumps(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FeatureFileError(f"feature matrix must be 2-D, got shape {m.shape}")
    return _HEAD.pack(MAGIC, *m.shape) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEAD.size:
        raise FeatureFileError("truncated FEAT header")
    magic, rows, dim = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}")
    if len(buf) != _HEAD.size + 4 * rows * dim:
        raise FeatureFileError(f"header declares {rows}x{dim} floats but body has {len(buf) - _HEAD.size} bytes")
    return np.frombuffer(buf, dtype="<f4", offset=_HEAD.size).reshape(rows, dim).astype(np.float32)


def save(path, matrix) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(matrix))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
