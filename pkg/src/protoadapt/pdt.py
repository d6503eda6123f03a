"""PDT1 raw tensor files.

Layout: magic ``PDT1``, u8 dtype code (0 = float32), u8 ndim, ndim little-endian
u32 extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PDT1"
_CODES = {0: np.dtype("<f4")}


class FormatError(ValueError):
    pass


def dumps(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise FormatError("too many dimensions for PDT1")
    header = MAGIC + struct.pack("<BB", 0, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise FormatError("bad magic, not a PDT1 blob")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}I", blob, 6)
    offset = 6 + 4 * ndim
    dtype = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - offset != count * dtype.itemsize:
        raise FormatError(f"payload size mismatch for shape {shape}")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).astype(np.float32)


def save(path, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
