"""PTSR tensor container codec (server-side implementation).

Format: bytes 0-3 magic ASCII "PTSR"; byte 4 version = 1; byte 5 dtype code
(0 = float32); byte 6 rank; then rank x u32 little-endian dims; then the
payload as little-endian float32, row-major.
"""

from __future__ import annotations

import math
import struct

import numpy as np

MAGIC = b"PTSR"
VERSION = 1
DTYPE_FLOAT32 = 0
MAX_RANK = 8


class PtsrError(ValueError):
    """Malformed PTSR payload; the message names the offending field."""


def dumps(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise PtsrError(f"rank: unsupported rank {arr.ndim}")
    if min(arr.shape) <= 0:
        raise PtsrError(f"dims: zero-sized dimension in {arr.shape}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_FLOAT32, arr.ndim)
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return header + dims + arr.astype("<f4").tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise PtsrError("magic: bad magic")
    if len(blob) < 7:
        raise PtsrError("header: truncated header")
    version, dtype_code, rank = blob[4], blob[5], blob[6]
    if version != VERSION:
        raise PtsrError(f"version: unsupported version {version}")
    if dtype_code != DTYPE_FLOAT32:
        raise PtsrError(f"dtype: unsupported dtype code {dtype_code}")
    if rank < 1 or rank > MAX_RANK:
        raise PtsrError(f"rank: unsupported rank {rank}")
    dims_end = 7 + 4 * rank
    if len(blob) < dims_end:
        raise PtsrError("dims: truncated dims")
    dims = struct.unpack_from("<" + "I" * rank, blob, 7)
    if min(dims) == 0:
        raise PtsrError(f"dims: zero-sized dimension in {dims}")
    count = math.prod(dims)
    payload = blob[dims_end:]
    if len(payload) < 4 * count:
        raise PtsrError("payload: truncated payload")
    if len(payload) > 4 * count:
        raise PtsrError("payload: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32, copy=True)
