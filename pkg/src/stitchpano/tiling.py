"""Sliding-window geometry for blended panorama sampling.

All geometry here is horizontal: windows span the full canvas height and
slide left to right by a fixed stride, and the wraparound "stitch" block
pairs the canvas's outermost half-windows so the seam sits inside a single
denoised patch.  Scattering and the coverage map are the inverse mappings
behind the sampler's per-cell weighted average, and `global_crop` trims the
extended canvas down to the final 2:1 panorama.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConfigError, ShapeError
from .tensors import Canvas

CONCAT_RIGHTMOST_FIRST = "rightmost-first"
CONCAT_LEFTMOST_FIRST = "leftmost-first"
ORDER_PRE = "pre"
ORDER_POST = "post"


@dataclass(frozen=True)
class TilingPlan:
    """Window layout over a canvas: ascending start columns, exact tiling.

    The stride must divide (canvas_width - window_width) so the last window
    ends exactly at the canvas edge; clamping a final partial window is
    refused because it would make coverage weights untestable.
    """

    canvas_width: int
    window_width: int
    stride: int
    starts: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.starts)


def plan_windows(canvas_width: int, window_width: int, stride: int) -> TilingPlan:
    """Build the sliding-window plan; window count is (W' - W)/stride + 1."""
    if window_width <= 0:
        raise ConfigError(f"window width must be positive, got {window_width}")
    if canvas_width < window_width:
        raise ConfigError(
            f"canvas width {canvas_width} is narrower than window width {window_width}"
        )
    if stride <= 0:
        raise ConfigError(f"stride must be positive, got {stride}")
    if stride > window_width:
        raise ConfigError(
            f"stride {stride} exceeds window width {window_width}; windows would leave gaps"
        )
    if (canvas_width - window_width) % stride != 0:
        raise ConfigError(
            f"stride {stride} must divide canvas_width - window_width = "
            f"{canvas_width - window_width} exactly (no clamped final window)"
        )
    starts = tuple(range(0, canvas_width - window_width + 1, stride))
    return TilingPlan(canvas_width, window_width, stride, starts)


@dataclass(frozen=True)
class StitchPlan:
    """Geometry of the wraparound block plus its pass multiplicity.

    half          width of each of the two block pieces (window_width / 2)
    passes        how many denoised copies of the block enter each step's
                  average (0 degenerates to plain window blending)
    concat_order  "rightmost-first" puts the canvas's rightmost half-window
                  first so the wrap junction sits at the block's center,
                  giving the denoiser symmetric context; "leftmost-first"
                  is the mirrored assembly
    order_mode    "pre" blends block passes into the same weighted sum as
                  the windows; "post" is the ablation-only variant that
                  overwrites the block region after window blending
    """

    half: int
    passes: int = 2
    concat_order: str = CONCAT_RIGHTMOST_FIRST
    order_mode: str = ORDER_PRE

    def __post_init__(self) -> None:
        if self.half <= 0:
            raise ConfigError(f"stitch half-width must be positive, got {self.half}")
        if self.passes < 0:
            raise ConfigError(f"stitch passes must be >= 0, got {self.passes}")
        if self.concat_order not in (CONCAT_RIGHTMOST_FIRST, CONCAT_LEFTMOST_FIRST):
            raise ConfigError(f"unknown concat order {self.concat_order!r}")
        if self.order_mode not in (ORDER_PRE, ORDER_POST):
            raise ConfigError(f"unknown order mode {self.order_mode!r}")

    @property
    def block_width(self) -> int:
        return 2 * self.half

    @classmethod
    def for_window(cls, window_width: int, **kwargs) -> "StitchPlan":
        """Block sized to one window: two half-window pieces."""
        if window_width % 2 != 0:
            raise ConfigError(
                f"window width must be even to split into halves, got {window_width}"
            )
        return cls(half=window_width // 2, **kwargs)


@dataclass(frozen=True)
class Region:
    """Placement of a patch on a canvas, as (canvas_start, patch_start, width)
    column spans.  Plain windows have one span; the stitch block has two."""

    segments: tuple[tuple[int, int, int], ...]

    @property
    def width(self) -> int:
        return sum(width for _, _, width in self.segments)


def window_region(start: int, width: int) -> Region:
    return Region(((start, 0, width),))


def stitch_region(canvas_width: int, plan: StitchPlan) -> Region:
    """Where the stitch block lives on the canvas.

    With the default rightmost-first assembly, the block's left half comes
    from (and scatters back to) the canvas's rightmost columns, and the
    block's right half maps to the canvas's leftmost columns.
    """
    half = plan.half
    if plan.block_width > canvas_width:
        raise ConfigError(
            f"stitch halves of width {half} overlap on a canvas of width {canvas_width}"
        )
    if plan.concat_order == CONCAT_RIGHTMOST_FIRST:
        return Region(((canvas_width - half, 0, half), (0, half, half)))
    return Region(((0, 0, half), (canvas_width - half, half, half)))


def extract_region(canvas: Canvas, region: Region) -> Canvas:
    out = np.empty((canvas.height, region.width, canvas.channels), dtype=np.float32)
    for canvas_start, patch_start, width in region.segments:
        if canvas_start < 0 or canvas_start + width > canvas.width:
            raise BoundsError(
                f"region span [{canvas_start}, {canvas_start + width}) falls outside "
                f"canvas width {canvas.width}"
            )
        out[:, patch_start : patch_start + width, :] = canvas.data[
            :, canvas_start : canvas_start + width, :
        ]
    return Canvas(out)


def extract_window(canvas: Canvas, start: int, width: int) -> Canvas:
    """Full-height column slice [start, start + width)."""
    if width <= 0 or start < 0 or start + width > canvas.width:
        raise BoundsError(
            f"window [{start}, {start + width}) falls outside canvas width {canvas.width}"
        )
    return extract_region(canvas, window_region(start, width))


def extract_stitch_block(canvas: Canvas, plan: StitchPlan) -> Canvas:
    """Assemble the wraparound block from the canvas's two outermost half-windows."""
    return extract_region(canvas, stitch_region(canvas.width, plan))


def scatter_accumulate(
    value_acc: np.ndarray,
    weight_acc: np.ndarray,
    region: Region,
    patch: Canvas,
    weight: float = 1.0,
) -> None:
    """Add weight * patch into value_acc over the region, and weight into
    weight_acc on the same cells.

    Accumulators are float64 arrays shaped like the target canvas and must
    be owned exclusively by the caller while accumulating.
    """
    if value_acc.shape != weight_acc.shape:
        raise ShapeError(
            f"accumulator shapes differ: {value_acc.shape} vs {weight_acc.shape}"
        )
    if value_acc.ndim != 3:
        raise ShapeError(f"accumulators must be rank-3, got rank {value_acc.ndim}")
    if value_acc.shape[0] != patch.height or value_acc.shape[2] != patch.channels:
        raise ShapeError(
            f"patch {patch.shape} does not match accumulator {value_acc.shape} "
            "in height/channels"
        )
    if region.width != patch.width:
        raise ShapeError(
            f"patch width {patch.width} does not match region width {region.width}"
        )
    w = np.float64(weight)
    for canvas_start, patch_start, width in region.segments:
        if canvas_start < 0 or canvas_start + width > value_acc.shape[1]:
            raise BoundsError(
                f"region span [{canvas_start}, {canvas_start + width}) falls outside "
                f"accumulator width {value_acc.shape[1]}"
            )
        piece = patch.data[:, patch_start : patch_start + width, :].astype(np.float64)
        value_acc[:, canvas_start : canvas_start + width, :] += w * piece
        weight_acc[:, canvas_start : canvas_start + width, :] += w


@dataclass(frozen=True)
class WeightMap:
    """Per-column accumulated weights.

    Windows span the full canvas height, so weights are constant down each
    column and across channels; `expand` broadcasts to a full canvas shape.
    Entries are integer-valued whenever all contributions carry unit weight.
    """

    columns: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(np.asarray(self.columns), dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ShapeError(f"weight map must be 1-D per-column, got rank {arr.ndim}")
        arr.setflags(write=False)
        object.__setattr__(self, "columns", arr)

    @property
    def canvas_width(self) -> int:
        return self.columns.shape[0]

    def expand(self, height: int, channels: int) -> np.ndarray:
        return np.broadcast_to(
            self.columns[None, :, None], (height, self.canvas_width, channels)
        ).copy()


def coverage_map(tiling: TilingPlan, stitch: StitchPlan | None = None) -> WeightMap:
    """Per-cell count of covering windows, plus `passes` on stitch-covered cells.

    This is the normalizer of the blended step: dividing the scattered sums
    by it yields per-cell weights summing to one.
    """
    columns = np.zeros(tiling.canvas_width, dtype=np.float64)
    for start in tiling.starts:
        columns[start : start + tiling.window_width] += 1.0
    if stitch is not None and stitch.passes > 0:
        for canvas_start, _, width in stitch_region(tiling.canvas_width, stitch).segments:
            columns[canvas_start : canvas_start + width] += float(stitch.passes)
    if columns.min() < 1.0:
        raise ConfigError("tiling leaves uncovered columns")
    return WeightMap(columns)


def global_crop(j0: Canvas, window_width: int) -> Canvas:
    """Keep columns [W/2, W' - W/2), discarding half a window from each side."""
    if window_width <= 0 or window_width % 2 != 0:
        raise ConfigError(f"crop window width must be positive and even, got {window_width}")
    if window_width >= j0.width:
        raise ConfigError(
            f"cannot crop {window_width} columns from a canvas of width {j0.width}"
        )
    half = window_width // 2
    return Canvas(j0.data[:, half : j0.width - half, :])
