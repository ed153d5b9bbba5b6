"""Float32 canvas tensors, seeded Gaussian noise, and bit-exact interchange.

Everything downstream (tiling, blending, metrics) operates on the Canvas
type defined here: an immutable row-major (height, width, channels) float32
array.  Random draws come from the Philox4x64-10 counter generator keyed
directly with a 64-bit seed, with normal variates produced by numpy's
ziggurat sampler, so streams are reproducible bit-for-bit across platforms.

On-disk interchange uses the PTSR container (magic "PTSR", version byte,
dtype byte, rank byte, little-endian u32 dims, little-endian float32
payload) plus standard 8-bit PNG for viewable images.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    DimensionError,
    FormatError,
    ShapeError,
    UnsupportedChannelsError,
)

RNG_ALGORITHM = "philox4x64-10+ziggurat"

PTSR_MAGIC = b"PTSR"
PTSR_VERSION = 1
PTSR_DTYPE_FLOAT32 = 0
_MAX_RANK = 8


def derive_seed(*parts: int | str) -> int:
    """Fold a mixed tuple of ints and strings into a uniform 64-bit seed.

    Used wherever one run seed has to fan out into independent streams
    (per-step, per-window, per-pass); blake2b keeps the mapping stable
    across platforms and sessions.
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("cannot fold a bool into a seed")
        if isinstance(part, (int, np.integer)):
            digest.update(b"i")
            digest.update(struct.pack("<Q", int(part) & 0xFFFFFFFFFFFFFFFF))
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            digest.update(b"s")
            digest.update(struct.pack("<I", len(raw)))
            digest.update(raw)
        else:
            raise TypeError(f"cannot fold {type(part).__name__} into a seed")
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class Rng:
    """Reproducible random source.

    The seed keys the Philox4x64-10 counter generator directly (no seed
    sequence scrambling), so the output stream is a pure function of the
    seed value on every platform.
    """

    seed: int
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise TypeError("seed must be an integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *parts: int | str) -> "Rng":
        """Child source whose stream is independent of the parent's."""
        return Rng(derive_seed(self.seed, *parts))


@dataclass(frozen=True, eq=False)
class Canvas:
    """Immutable (height, width, channels) float32 image or latent tensor.

    Construction copies the backing array, pins it to contiguous float32,
    verifies every value is finite, and freezes it, so a Canvas can be
    shared across threads without defensive copies.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DimensionError(
                f"canvas must be rank-3 (height, width, channels), got rank {arr.ndim}"
            )
        if min(arr.shape) <= 0:
            raise DimensionError(f"canvas dimensions must be positive, got {arr.shape}")
        arr = np.array(arr, dtype=np.float32, order="C", copy=True)
        if not np.isfinite(arr).all():
            raise ValueError("canvas holds non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def constant(cls, height: int, width: int, channels: int, value: float) -> "Canvas":
        return cls(np.full((height, width, channels), value, dtype=np.float32))

    def equals(self, other: "Canvas") -> bool:
        """Bit-exact comparison."""
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def _require_same_shape(self, other: "Canvas") -> None:
        if self.shape != other.shape:
            raise ShapeError(f"canvas shapes differ: {self.shape} vs {other.shape}")

    def add(self, other: "Canvas") -> "Canvas":
        self._require_same_shape(other)
        return Canvas(self.data + other.data)

    def subtract(self, other: "Canvas") -> "Canvas":
        self._require_same_shape(other)
        return Canvas(self.data - other.data)

    def scale(self, factor: float) -> "Canvas":
        return Canvas(self.data * np.float32(factor))

    def divide(self, other: "Canvas | float") -> "Canvas":
        if isinstance(other, Canvas):
            self._require_same_shape(other)
            denom = other.data
        else:
            denom = np.float32(other)
        if np.any(denom == 0):
            raise ZeroDivisionError("elementwise divide by zero")
        return Canvas(self.data / denom)


def gaussian_fill(height: int, width: int, channels: int, rng: Rng) -> Canvas:
    """Canvas of i.i.d. standard-normal entries, deterministic per seed."""
    if height <= 0 or width <= 0 or channels <= 0:
        raise DimensionError(
            f"all dimensions must be positive, got {(height, width, channels)}"
        )
    data = rng.generator().standard_normal((height, width, channels), dtype=np.float32)
    return Canvas(data)


# ---------------------------------------------------------------------------
# PTSR container


def ptsr_dumps(array: np.ndarray) -> bytes:
    """Serialize an array (rank 1..8) as PTSR bytes.

    The container stores float32 only; other float dtypes are cast on the
    way in, so the bit-exact round-trip guarantee applies to float32 data.
    """
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    if arr.ndim < 1 or arr.ndim > _MAX_RANK:
        raise FormatError(f"rank: unsupported rank {arr.ndim}")
    if min(arr.shape) <= 0:
        raise FormatError(f"dims: zero-sized dimension in {arr.shape}")
    header = PTSR_MAGIC + struct.pack("<BBB", PTSR_VERSION, PTSR_DTYPE_FLOAT32, arr.ndim)
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return header + dims + arr.astype("<f4").tobytes(order="C")


def ptsr_loads(blob: bytes) -> np.ndarray:
    """Parse PTSR bytes; raises FormatError naming the offending field."""
    if len(blob) < 4 or blob[:4] != PTSR_MAGIC:
        raise FormatError("magic: bad magic")
    if len(blob) < 7:
        raise FormatError("header: truncated header")
    version, dtype_code, rank = blob[4], blob[5], blob[6]
    if version != PTSR_VERSION:
        raise FormatError(f"version: unsupported version {version}")
    if dtype_code != PTSR_DTYPE_FLOAT32:
        raise FormatError(f"dtype: unsupported dtype code {dtype_code}")
    if rank < 1 or rank > _MAX_RANK:
        raise FormatError(f"rank: unsupported rank {rank}")
    dims_end = 7 + 4 * rank
    if len(blob) < dims_end:
        raise FormatError("dims: truncated dims")
    dims = struct.unpack_from("<" + "I" * rank, blob, 7)
    if min(dims) == 0:
        raise FormatError(f"dims: zero-sized dimension in {dims}")
    count = math.prod(dims)
    payload = blob[dims_end:]
    if len(payload) < 4 * count:
        raise FormatError("payload: truncated payload")
    if len(payload) > 4 * count:
        raise FormatError("payload: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return data.astype(np.float32, copy=True)


def write_array(array: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ptsr_dumps(array))


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return ptsr_loads(fh.read())


def write_tensor(canvas: Canvas, path) -> None:
    write_array(canvas.data, path)


def read_tensor(path) -> Canvas:
    arr = read_array(path)
    if arr.ndim != 3:
        raise FormatError(f"rank: expected a rank-3 canvas, file holds rank {arr.ndim}")
    try:
        return Canvas(arr)
    except ValueError as exc:
        raise FormatError(f"payload: {exc}") from exc


# ---------------------------------------------------------------------------
# PNG export / import


def export_image(canvas: Canvas, path, value_range: tuple[float, float] = (0.0, 1.0)) -> None:
    """Map value_range linearly to [0, 255] (rounding half up), clamp, write PNG."""
    if canvas.channels not in (1, 3):
        raise UnsupportedChannelsError(
            f"PNG export supports 1 or 3 channels, got {canvas.channels}"
        )
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ValueError(f"value_range must be increasing, got ({lo}, {hi})")
    scaled = (canvas.data.astype(np.float64) - lo) / (hi - lo) * 255.0
    pixels = np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)
    if canvas.channels == 1:
        image = Image.fromarray(pixels[:, :, 0], mode="L")
    else:
        image = Image.fromarray(pixels, mode="RGB")
    image.save(path, format="PNG")


def import_image(path, value_range: tuple[float, float] = (0.0, 1.0)) -> Canvas:
    """Read a PNG back into a Canvas, mapping [0, 255] to value_range."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ValueError(f"value_range must be increasing, got ({lo}, {hi})")
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        pixels = np.asarray(img, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    data = lo + pixels / 255.0 * (hi - lo)
    return Canvas(data.astype(np.float32))
