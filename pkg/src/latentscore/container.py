"""Flat binary array container used for latents, waveforms, video
features and embedding sets.

Byte layout (everything little-endian):

    offset  size  field
    0       12    magic  b"LSCORE-ARR\\x00\\x00"
    12      4     format version, uint32 (currently 1)
    16      4     ndim, uint32
    20      8*n   extents, uint64 each
    ...           payload: float64 values, row-major (C order)

The 16-byte magic+version header is fixed; the shape descriptor and
payload follow it directly. Files are written atomically enough for
single-writer use (full buffer in one call).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"LSCORE-ARR\x00\x00"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "write_array", "read_array"]


def write_array(path, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + dims + arr.tobytes(order="C"))


def read_array(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read array container {path}: {exc}") from exc
    if len(raw) < 20:
        raise DataError(f"{path}: truncated container (only {len(raw)} bytes)")
    if raw[:12] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:12]!r}")
    version, ndim = struct.unpack_from("<II", raw, 12)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    offset = 20
    if len(raw) < offset + 8 * ndim:
        raise DataError(f"{path}: truncated shape descriptor")
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset) if ndim else ()
    offset += 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    expected = offset + 8 * count
    if len(raw) != expected:
        raise DataError(
            f"{path}: payload size mismatch (file {len(raw)} bytes, expected {expected})"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)
