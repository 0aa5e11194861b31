"""Temperature-field serialisation: CSV and the little-endian HSLF binary format.

HSLF layout::

    b"HSLF" | u32 version (=1) | u32 rows | u32 cols | rows*cols f64, row-major
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"HSLF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def pack_field(field: np.ndarray) -> bytes:
    field = np.asarray(field, dtype="<f8")
    if field.ndim != 2:
        raise FormatError("field must be two-dimensional")
    rows, cols = field.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(field).tobytes()


def read_field_stream(stream) -> np.ndarray:
    head = stream.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError("truncated HSLF header")
    magic, version, rows, cols = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported HSLF version {version}")
    nbytes = rows * cols * 8
    data = stream.read(nbytes)
    if len(data) < nbytes:
        raise FormatError(f"truncated HSLF payload: {len(data)} of {nbytes} bytes")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(float)


def unpack_field(data: bytes) -> np.ndarray:
    return read_field_stream(io.BytesIO(data))


def write_hslf(path, field: np.ndarray) -> None:
    Path(path).write_bytes(pack_field(field))


def read_hslf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_field_stream(fh)


def write_field_csv(path, field: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        for row in np.asarray(field):
            fh.write(",".join(f"{v:.9g}" for v in row))
            fh.write("\n")


def read_field_csv(path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return arr


def read_field(path) -> np.ndarray:
    """Load a field, sniffing HSLF by its magic bytes and falling back to CSV."""
    with open(path, "rb") as fh:
        if fh.read(4) == MAGIC:
            fh.seek(0)
            return read_field_stream(fh)
    return read_field_csv(path)
