"""Blended denoising loops over a tiled canvas.

Each step crops every planned window (plus, in stitch mode, repeated passes
over the wraparound block), hands the patches to a denoiser, and recombines
the outputs as the per-cell weighted mean — the closed-form minimizer of the
sum of squared per-window deviations.  Requests may be dispatched to the
backend concurrently, but accumulation always runs in a fixed index order
(stitch pass 1, stitch pass 2, ..., window 1..n), so results are
bit-reproducible regardless of completion order.
"""

from __future__ import annotations

import abc
import json
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BackendError, ConfigError, ProtocolError, ShapeError
from .tensors import Canvas, Rng, derive_seed, gaussian_fill
from .tiling import (
    CONCAT_LEFTMOST_FIRST,
    CONCAT_RIGHTMOST_FIRST,
    ORDER_POST,
    ORDER_PRE,
    Region,
    StitchPlan,
    TilingPlan,
    extract_region,
    global_crop,
    plan_windows,
    scatter_accumulate,
    stitch_region,
    window_region,
)

MODE_MULTIDIFFUSION = "multidiffusion"
MODE_STITCHDIFFUSION = "stitchdiffusion"


@dataclass(frozen=True)
class Conditioning:
    """Text conditioning forwarded verbatim to the backend.

    Either a raw prompt or an opaque backend-side embedding reference must
    be present; backends that pre-encode prompts hand back an embedding_id
    which is echoed on subsequent requests.
    """

    prompt: str | None = None
    embedding_id: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt and not self.embedding_id:
            raise ConfigError("conditioning needs a prompt or an embedding_id")


class DenoiseRequest(NamedTuple):
    patch: Canvas
    t: int
    conditioning: Conditioning
    seed: int
    total_steps: int


class DenoiserHandle(abc.ABC):
    """Per-step denoiser contract: patch in, less-noisy patch out.

    Implementations must return a patch of the input's shape, be
    deterministic per (patch, t, conditioning, seed), and be safe for
    concurrent `denoise` calls.  `denoise_batch` returns results in request
    order regardless of completion order; on failure it raises a
    BackendError carrying the failing request's index.
    """

    backend_id: str = "unknown"

    @abc.abstractmethod
    def denoise(
        self,
        patch: Canvas,
        t: int,
        conditioning: Conditioning,
        seed: int,
        total_steps: int = 0,
    ) -> Canvas:
        ...

    def denoise_batch(self, requests: Sequence[DenoiseRequest]) -> list[Canvas]:
        results: list[Canvas] = []
        for index, request in enumerate(requests):
            try:
                results.append(
                    self.denoise(
                        request.patch,
                        request.t,
                        request.conditioning,
                        request.seed,
                        request.total_steps,
                    )
                )
            except BackendError as err:
                if err.request_index is None:
                    err.request_index = index
                raise
            except Exception as exc:
                err = BackendError(str(exc), request_index=index)
                raise err from exc
        return results


@dataclass(frozen=True)
class SamplerConfig:
    """Full description of one generation run (all sizes in cells).

    In stitch mode the canvas must be 2*height wider than one window so that
    the final crop yields a 2:1 equirectangular panorama; multidiffusion
    mode accepts any canvas the stride tiles exactly.
    """

    height: int
    window_width: int
    canvas_width: int
    stride: int
    steps: int
    seed: int
    channels: int = 4
    mode: str = MODE_STITCHDIFFUSION
    stitch_passes: int = 2
    stitch_order: str = ORDER_PRE
    concat_order: str = CONCAT_RIGHTMOST_FIRST
    periodic_init: bool = True
    enforce_periodicity: bool = False

    def __post_init__(self) -> None:
        for name in ("height", "window_width", "canvas_width", "stride", "steps", "channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.mode not in (MODE_MULTIDIFFUSION, MODE_STITCHDIFFUSION):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.stitch_passes < 0:
            raise ConfigError(f"stitch_passes must be >= 0, got {self.stitch_passes}")
        if self.stitch_order not in (ORDER_PRE, ORDER_POST):
            raise ConfigError(f"unknown stitch order {self.stitch_order!r}")
        if self.concat_order not in (CONCAT_RIGHTMOST_FIRST, CONCAT_LEFTMOST_FIRST):
            raise ConfigError(f"unknown concat order {self.concat_order!r}")
        if self.window_width % 2 != 0:
            raise ConfigError(
                "window_width must be even (the final crop removes half a window "
                f"from each side), got {self.window_width}"
            )
        if self.canvas_width < self.window_width:
            raise ConfigError(
                f"canvas_width {self.canvas_width} is narrower than window_width "
                f"{self.window_width}"
            )
        if (self.canvas_width - self.window_width) % self.stride != 0:
            raise ConfigError(
                f"stride {self.stride} must divide canvas_width - window_width = "
                f"{self.canvas_width - self.window_width} exactly"
            )
        if self.stride > self.window_width:
            raise ConfigError("stride exceeds window width; windows would leave gaps")
        if self.mode == MODE_STITCHDIFFUSION:
            expected = 2 * self.height + self.window_width
            if self.canvas_width != expected:
                raise ConfigError(
                    f"stitch mode requires canvas_width = 2*height + window_width = "
                    f"{expected}, got {self.canvas_width}"
                )

    def tiling_plan(self) -> TilingPlan:
        return plan_windows(self.canvas_width, self.window_width, self.stride)

    def stitch_plan(self) -> StitchPlan | None:
        if self.mode != MODE_STITCHDIFFUSION:
            return None
        return StitchPlan.for_window(
            self.window_width,
            passes=self.stitch_passes,
            concat_order=self.concat_order,
            order_mode=self.stitch_order,
        )


def init_canvas(config: SamplerConfig, rng: Rng) -> Canvas:
    """Gaussian starting canvas J_T.

    With periodic_init the noise repeats with period 2*height, so the
    extended canvas starts out consistent with a wraparound panorama; this
    is the weakest mechanism that makes the left/right halves of the final
    canvas agree approximately without per-step enforcement.
    """
    if not config.periodic_init:
        return gaussian_fill(config.height, config.canvas_width, config.channels, rng)
    period = 2 * config.height
    base = gaussian_fill(config.height, period, config.channels, rng)
    index = np.arange(config.canvas_width) % period
    return Canvas(np.take(base.data, index, axis=1))


def _dispatch(
    denoiser: DenoiserHandle,
    requests: list[DenoiseRequest],
    labels: list[str],
    t: int,
) -> list[Canvas]:
    try:
        results = denoiser.denoise_batch(requests)
    except BackendError as err:
        index = err.request_index
        unit = labels[index] if index is not None and 0 <= index < len(labels) else "unknown unit"
        raise BackendError(
            f"step {t}, {unit}: {err}", request_index=index, step=t, unit=unit
        ) from err
    if len(results) != len(requests):
        raise ProtocolError(
            f"step {t}: backend returned {len(results)} results for {len(requests)} requests",
            step=t,
        )
    for index, (request, result) in enumerate(zip(requests, results)):
        if result.shape != request.patch.shape:
            raise ProtocolError(
                f"step {t}, {labels[index]}: backend returned shape {result.shape} "
                f"for input {request.patch.shape}",
                request_index=index,
                step=t,
                unit=labels[index],
            )
    return results


def _blend(
    jt: Canvas,
    t: int,
    tiling: TilingPlan,
    stitch: StitchPlan | None,
    denoiser: DenoiserHandle,
    conditioning: Conditioning,
    seed: int,
    total_steps: int,
) -> Canvas:
    """Denoise stitch passes and windows, then take the per-cell weighted mean."""
    if jt.width != tiling.canvas_width:
        raise ShapeError(
            f"canvas width {jt.width} does not match plan width {tiling.canvas_width}"
        )
    requests: list[DenoiseRequest] = []
    regions: list[Region] = []
    labels: list[str] = []
    if stitch is not None and stitch.passes > 0:
        region = stitch_region(tiling.canvas_width, stitch)
        block = extract_region(jt, region)
        for pass_index in range(1, stitch.passes + 1):
            requests.append(
                DenoiseRequest(
                    block, t, conditioning, derive_seed(seed, t, "stitch", pass_index), total_steps
                )
            )
            regions.append(region)
            labels.append(f"stitch pass {pass_index}/{stitch.passes}")
    for window_index, start in enumerate(tiling.starts):
        region = window_region(start, tiling.window_width)
        requests.append(
            DenoiseRequest(
                extract_region(jt, region),
                t,
                conditioning,
                derive_seed(seed, t, "window", window_index),
                total_steps,
            )
        )
        regions.append(region)
        labels.append(f"window {window_index} [start {start}]")

    results = _dispatch(denoiser, requests, labels, t)

    value = np.zeros(jt.shape, dtype=np.float64)
    weight = np.zeros(jt.shape, dtype=np.float64)
    for region, result in zip(regions, results):
        scatter_accumulate(value, weight, region, result, 1.0)
    return Canvas((value / weight).astype(np.float32))


def multidiffusion_step(
    jt: Canvas,
    t: int,
    tiling: TilingPlan,
    denoiser: DenoiserHandle,
    conditioning: Conditioning,
    *,
    seed: int = 0,
    total_steps: int = 0,
) -> Canvas:
    """One blended step: every covering window's denoised value, averaged per cell.

    With unit weights this is exactly the least-squares fusion of the window
    outputs: each cell takes the mean of all denoised windows covering it.
    """
    return _blend(jt, t, tiling, None, denoiser, conditioning, seed, total_steps)


def stitchdiffusion_step(
    jt: Canvas,
    t: int,
    tiling: TilingPlan,
    stitch: StitchPlan,
    denoiser: DenoiserHandle,
    conditioning: Conditioning,
    *,
    seed: int = 0,
    total_steps: int = 0,
) -> Canvas:
    """Blended step with repeated pre-denoising of the wraparound block.

    In the default "pre" order the block passes join the same weighted sum
    as the windows (each with unit weight, so stitch-covered cells carry
    `passes` extra weight in the normalizer).  The "post" order reproduces
    the known-bad ablation: blend windows first, then overwrite the block
    region with the mean of repeated block denoisings of that result.
    """
    if stitch is None or stitch.passes == 0:
        return _blend(jt, t, tiling, None, denoiser, conditioning, seed, total_steps)
    if stitch.order_mode == ORDER_PRE:
        return _blend(jt, t, tiling, stitch, denoiser, conditioning, seed, total_steps)

    blended = _blend(jt, t, tiling, None, denoiser, conditioning, seed, total_steps)
    region = stitch_region(tiling.canvas_width, stitch)
    block = extract_region(blended, region)
    requests = [
        DenoiseRequest(
            block, t, conditioning, derive_seed(seed, t, "stitch", pass_index), total_steps
        )
        for pass_index in range(1, stitch.passes + 1)
    ]
    labels = [f"stitch pass {i}/{stitch.passes}" for i in range(1, stitch.passes + 1)]
    results = _dispatch(denoiser, requests, labels, t)
    mean_block = np.mean(
        np.stack([result.data.astype(np.float64) for result in results]), axis=0
    )
    out = np.array(blended.data, copy=True)
    for canvas_start, patch_start, width in region.segments:
        out[:, canvas_start : canvas_start + width, :] = mean_block[
            :, patch_start : patch_start + width, :
        ].astype(np.float32)
    return Canvas(out)


def _enforce_period(canvas: Canvas, period: int) -> Canvas:
    """Replace each column group {c, c+period, ...} by its mean, making the
    wraparound identity between the canvas halves exact."""
    if canvas.width <= period:
        return canvas
    data = canvas.data.astype(np.float64)
    out = np.array(canvas.data, copy=True)
    for phase in range(period):
        index = np.arange(phase, canvas.width, period)
        if index.size > 1:
            mean = data[:, index, :].mean(axis=1).astype(np.float32)
            out[:, index, :] = mean[:, None, :]
    return Canvas(out)


@dataclass
class RunResult:
    """Outcome of a full run: the extended canvas J0, the cropped panorama,
    and per-step wall times for the manifest."""

    j0: Canvas
    jsyn: Canvas
    config: SamplerConfig
    backend_id: str
    step_seconds: list[float] = field(default_factory=list)


def run(config: SamplerConfig, denoiser: DenoiserHandle, conditioning: Conditioning) -> RunResult:
    """Iterate the configured step function from t = steps down to 1.

    The starting canvas is `init_canvas(config, Rng(config.seed))`; per-step
    request seeds derive from config.seed, so runs are bit-reproducible for
    deterministic backends.  A backend failure aborts the run (the error
    carries step and window indices); partial results are discarded.
    """
    tiling = config.tiling_plan()
    stitch = config.stitch_plan()
    canvas = init_canvas(config, Rng(config.seed))
    step_seconds: list[float] = []
    for t in range(config.steps, 0, -1):
        began = time.perf_counter()
        if config.mode == MODE_STITCHDIFFUSION:
            canvas = stitchdiffusion_step(
                canvas, t, tiling, stitch, denoiser, conditioning,
                seed=config.seed, total_steps=config.steps,
            )
        else:
            canvas = multidiffusion_step(
                canvas, t, tiling, denoiser, conditioning,
                seed=config.seed, total_steps=config.steps,
            )
        if config.enforce_periodicity:
            canvas = _enforce_period(canvas, 2 * config.height)
        step_seconds.append(time.perf_counter() - began)
    jsyn = global_crop(canvas, config.window_width)
    backend_id = getattr(denoiser, "backend_id", "unknown")
    return RunResult(canvas, jsyn, config, backend_id, step_seconds)


# ---------------------------------------------------------------------------
# Run manifest


def write_manifest(path, result: RunResult, outputs: dict[str, str]) -> None:
    """Drop a JSON record next to the outputs: config echo, seed, backend
    identifier, per-step wall times, and output file paths."""
    from . import __version__

    payload = {
        "config": asdict(result.config),
        "seed": result.config.seed,
        "backend": result.backend_id,
        "step_seconds": [round(s, 6) for s in result.step_seconds],
        "outputs": dict(outputs),
        "engine_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
