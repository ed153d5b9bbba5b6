"""Patch-based evaluation: recorded-location crops, CLIP-score, FID, seam ratio.

The protocol is: crop patches at recorded locations from real panoramas,
crop the same locations from generated ones, embed both sets with an
external encoder, then compare — mean paired cosine similarity
("CLIP-score") and the Frechet distance between Gaussian fits of the two
embedding clouds (FID).  Embeddings are ingested from PTSR files or fetched
through a backend's image-embedding endpoint; no vision model runs in this
package, and the report records which encoder produced the embeddings.

The seam ratio quantifies wraparound continuity directly on pixels or
latents: the mean absolute difference between a panorama's last and first
columns, normalized by the mean difference between adjacent interior
columns.  Values near 1 mean the wrap seam is no worse than interior
texture; large values mean a visible seam.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BoundsError,
    ConfigError,
    DegenerateEmbeddingError,
    InsufficientSamplesError,
    NumericalDomainError,
    ShapeError,
)
from .tensors import Canvas, Rng, read_array, write_array


@dataclass(frozen=True)
class PatchLocation:
    """One recorded crop: top-left corner (x, y) of a size x size patch in
    image number image_index.  Patches never wrap around image borders."""

    image_index: int
    x: int
    y: int
    size: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ConfigError(f"patch size must be positive, got {self.size}")
        if self.image_index < 0 or self.x < 0 or self.y < 0:
            raise ConfigError("patch location fields must be non-negative")


def sample_locations(
    image_dims: tuple[int, int],
    count: int,
    size: int,
    rng: Rng,
    n_images: int = 1,
) -> list[PatchLocation]:
    """Draw `count` patch locations uniformly over all valid offsets.

    image_dims is (height, width).  Offsets are inclusive of the last
    position where the patch still fits, so a 512-wide patch in a 1024-wide
    panorama lands at x in [0, 512] and, at height 512, always at y = 0.
    """
    height, width = image_dims
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if n_images < 1:
        raise ConfigError(f"n_images must be >= 1, got {n_images}")
    if size > height or size > width:
        raise ConfigError(
            f"patch size {size} exceeds image dimensions {image_dims}"
        )
    gen = rng.generator()
    image_indices = gen.integers(0, n_images, size=count)
    ys = gen.integers(0, height - size + 1, size=count)
    xs = gen.integers(0, width - size + 1, size=count)
    return [
        PatchLocation(int(i), int(x), int(y), size)
        for i, x, y in zip(image_indices, xs, ys)
    ]


def crop_patch(canvas: Canvas, location: PatchLocation) -> Canvas:
    """Re-crop a recorded location; bit-identical for the same source image."""
    if location.y + location.size > canvas.height or location.x + location.size > canvas.width:
        raise BoundsError(
            f"patch at ({location.x}, {location.y}) size {location.size} exceeds "
            f"image of shape {canvas.shape}"
        )
    return Canvas(
        canvas.data[
            location.y : location.y + location.size,
            location.x : location.x + location.size,
            :,
        ]
    )


def save_locations(path, locations: Sequence[PatchLocation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(loc) for loc in locations], fh, indent=2)
        fh.write("\n")


def load_locations(path) -> list[PatchLocation]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        PatchLocation(int(e["image_index"]), int(e["x"]), int(e["y"]), int(e["size"]))
        for e in raw
    ]


# ---------------------------------------------------------------------------
# Embedding sets and metrics


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """N x D matrix of embedding vectors (float64, finite, N >= 1)."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(np.asarray(self.vectors), dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"embeddings must be rank-2 (N, D), got rank {arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"embedding matrix must be non-empty, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("embeddings hold non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def load_embeddings(path) -> EmbeddingSet:
    arr = read_array(path)
    if arr.ndim != 2:
        raise ShapeError(f"embedding file must hold a rank-2 array, got rank {arr.ndim}")
    return EmbeddingSet(arr)


def save_embeddings(path, embeddings: EmbeddingSet) -> None:
    write_array(embeddings.vectors.astype(np.float32), path)


def collect_embeddings(
    patches: Sequence[Canvas], embed: Callable[[Canvas], np.ndarray]
) -> EmbeddingSet:
    """Run an external embedder (e.g. a remote backend's embed_image) over
    patches, preserving order so sets stay paired by location index."""
    rows = [np.asarray(embed(patch), dtype=np.float64).reshape(-1) for patch in patches]
    return EmbeddingSet(np.stack(rows))


def clip_score(gen: EmbeddingSet, real: EmbeddingSet) -> float:
    """Mean cosine similarity over location-paired embeddings, in [-1, 1]."""
    if gen.count != real.count or gen.dim != real.dim:
        raise ShapeError(
            f"paired sets must match in shape: {gen.vectors.shape} vs {real.vectors.shape}"
        )
    g = gen.vectors
    r = real.vectors
    gg = np.einsum("nd,nd->n", g, g)
    rr = np.einsum("nd,nd->n", r, r)
    if np.any(gg == 0) or np.any(rr == 0):
        raise DegenerateEmbeddingError("zero-norm embedding vector has no direction")
    cos = np.einsum("nd,nd->n", g, r) / np.sqrt(gg * rr)
    return float(np.clip(cos, -1.0, 1.0).mean())


def matrix_sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    The input must be symmetric to ~1e-8 (relative to its largest entry)
    with eigenvalues above -1e-8 relative to the spectral radius; small
    negative eigenvalues are clamped to zero.  Returns R with R @ R close
    to the input in Frobenius norm.
    """
    S = np.asarray(matrix, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NumericalDomainError(f"matrix must be square, got shape {S.shape}")
    scale = max(1.0, float(np.abs(S).max()))
    if float(np.abs(S - S.T).max()) > 1e-8 * scale:
        raise NumericalDomainError("matrix is not symmetric within tolerance")
    S = (S + S.T) / 2.0
    eigenvalues, eigenvectors = np.linalg.eigh(S)
    spectral = max(1.0, float(np.abs(eigenvalues).max()))
    if eigenvalues.min() < -1e-8 * spectral:
        raise NumericalDomainError(
            f"matrix is indefinite: smallest eigenvalue {eigenvalues.min():.3e}"
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    root = (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T
    return (root + root.T) / 2.0


def fid(gen: EmbeddingSet, real: EmbeddingSet) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1^(1/2) S2 S1^(1/2))), with
    covariances normalized by 1/(N-1).  N >= D + 1 is recommended so the
    covariances have full rank; smaller N still computes thanks to
    eigenvalue clamping.  Tiny negative totals (within 1e-6) are clamped
    to zero.
    """
    if gen.count < 2 or real.count < 2:
        raise InsufficientSamplesError(
            f"need at least 2 samples per set, got {gen.count} and {real.count}"
        )
    if gen.dim != real.dim:
        raise ShapeError(f"embedding dims differ: {gen.dim} vs {real.dim}")
    mu1 = gen.vectors.mean(axis=0)
    mu2 = real.vectors.mean(axis=0)
    sigma1 = np.atleast_2d(np.cov(gen.vectors, rowvar=False))
    sigma2 = np.atleast_2d(np.cov(real.vectors, rowvar=False))
    root1 = matrix_sqrt_psd(sigma1)
    inner = root1 @ sigma2 @ root1
    trace_sqrt = float(np.trace(matrix_sqrt_psd(inner)))
    delta = mu1 - mu2
    value = float(delta @ delta + np.trace(sigma1) + np.trace(sigma2) - 2.0 * trace_sqrt)
    if value < -1e-6:
        raise NumericalDomainError(f"FID evaluated to {value:.3e} < -1e-6")
    return max(value, 0.0)


def seam_discontinuity(panorama: Canvas) -> float:
    """Wrap-seam severity: mean |last col - first col| over the mean
    adjacent-interior-column difference.  ~1 means the seam is no worse
    than interior texture; 0 for a constant image."""
    if panorama.width < 3:
        raise ConfigError(f"seam metric needs width >= 3, got {panorama.width}")
    data = panorama.data.astype(np.float64)
    d_wrap = float(np.abs(data[:, -1, :] - data[:, 0, :]).mean())
    d_interior = float(np.abs(np.diff(data, axis=1)).mean())
    return d_wrap / max(d_interior, 1e-12)


def seam_components(panorama: Canvas) -> tuple[float, float, float]:
    """(d_wrap, d_interior, ratio) for reporting."""
    if panorama.width < 3:
        raise ConfigError(f"seam metric needs width >= 3, got {panorama.width}")
    data = panorama.data.astype(np.float64)
    d_wrap = float(np.abs(data[:, -1, :] - data[:, 0, :]).mean())
    d_interior = float(np.abs(np.diff(data, axis=1)).mean())
    return d_wrap, d_interior, d_wrap / max(d_interior, 1e-12)


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class EvalReport:
    """Aggregated metrics over repeated generation runs."""

    clip_mean: float
    clip_std: float
    fid_mean: float
    fid_std: float
    repeats: int
    embedding_source: str = "unspecified"
    seam_ratio: float | None = None

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.clip_std < 0 or self.fid_std < 0:
            raise ConfigError("standard deviations must be non-negative")

    @classmethod
    def from_samples(
        cls,
        clip_scores: Sequence[float],
        fids: Sequence[float],
        embedding_source: str = "unspecified",
        seam_ratio: float | None = None,
    ) -> "EvalReport":
        if len(clip_scores) != len(fids) or len(clip_scores) < 1:
            raise ConfigError("need one clip score and one fid per repeat")
        clips = np.asarray(clip_scores, dtype=np.float64)
        fids_arr = np.asarray(fids, dtype=np.float64)
        # Sample std over repeats (matches how repeated-run tables report spread).
        ddof = 1 if clips.size > 1 else 0
        return cls(
            clip_mean=float(clips.mean()),
            clip_std=float(clips.std(ddof=ddof)),
            fid_mean=float(fids_arr.mean()),
            fid_std=float(fids_arr.std(ddof=ddof)),
            repeats=int(clips.size),
            embedding_source=embedding_source,
            seam_ratio=seam_ratio,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**raw)
