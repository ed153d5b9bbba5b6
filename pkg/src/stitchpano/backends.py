"""Concrete denoiser backends: in-process mocks and the HTTP remote client.

The mocks give the sampler predictable behavior for tests and desk-scale
experiments (identity and constant are fixed points of the blend; the blur
mock adds spatial mixing so seam behavior becomes observable; the seeded
noise mock exercises per-pass seed derivation).  The remote client speaks
the wire protocol — HTTP + JSON with tensors as base64 PTSR — to a real
model server, multiplexing requests up to a configured in-flight limit.
"""

from __future__ import annotations

import base64
import binascii
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests

from .errors import (
    BackendError,
    ConfigError,
    DataError,
    FormatError,
    ProtocolError,
    TransportError,
)
from .sampler import Conditioning, DenoiseRequest, DenoiserHandle
from .tensors import Canvas, Rng, derive_seed, ptsr_dumps, ptsr_loads


@dataclass(frozen=True)
class MockSchedule:
    """Per-step signal (alpha) and noise (sigma) coefficients for the mocks.

    Arrays are indexed by t - 1 for t in 1..steps.  Alpha lives in (0, 1]
    and grows as t decreases (less noise late in the run); sigma is
    non-negative.
    """

    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        alpha = np.array(np.asarray(self.alpha), dtype=np.float64, copy=True)
        sigma = np.array(np.asarray(self.sigma), dtype=np.float64, copy=True)
        if alpha.ndim != 1 or sigma.ndim != 1 or alpha.shape != sigma.shape:
            raise ConfigError("alpha and sigma must be 1-D arrays of equal length")
        if alpha.size < 1:
            raise ConfigError("schedule needs at least one step")
        if np.any(alpha <= 0) or np.any(alpha > 1):
            raise ConfigError("alpha values must lie in (0, 1]")
        if np.any(sigma < 0):
            raise ConfigError("sigma values must be non-negative")
        if np.any(np.diff(alpha) > 0):
            raise ConfigError("alpha must be non-decreasing as t decreases")
        alpha.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    @property
    def steps(self) -> int:
        return self.alpha.shape[0]

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ConfigError(f"step {t} outside schedule of {self.steps} steps")

    def alpha_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.sigma[t - 1])

    def mix_at(self, t: int) -> float:
        """Noise fraction sigma / (sigma + alpha); 0 means pure identity."""
        alpha = self.alpha_at(t)
        sigma = self.sigma_at(t)
        return sigma / (sigma + alpha)

    @classmethod
    def linear(cls, steps: int, alpha_final: float = 0.1, sigma_peak: float = 1.0) -> "MockSchedule":
        """Linear ramp: alpha runs 1 -> alpha_final and sigma 0 -> sigma_peak
        as t climbs from 1 to steps, so the final step (t=1) is noise-free."""
        if steps < 1:
            raise ConfigError("schedule needs at least one step")
        if steps == 1:
            return cls(np.array([1.0]), np.array([0.0]))
        t = np.arange(1, steps + 1, dtype=np.float64)
        alpha = 1.0 - (1.0 - alpha_final) * (t - 1) / (steps - 1)
        sigma = sigma_peak * (t - 1) / (steps - 1)
        return cls(alpha, sigma)


# ---------------------------------------------------------------------------
# Mock backends


class _IdentityDenoiser(DenoiserHandle):
    backend_id = "mock:identity"

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        return patch


class _ConstantDenoiser(DenoiserHandle):
    def __init__(self, value: float):
        self.value = float(value)
        self.backend_id = f"mock:constant:{self.value:g}"

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        return Canvas.constant(patch.height, patch.width, patch.channels, self.value)


def _box_blur_columns(data: np.ndarray, radius: int) -> np.ndarray:
    """Horizontal box mean of width 2*radius + 1 with mirror padding inside
    the patch (the edge column is not repeated), computed in float64."""
    padded = np.pad(
        data.astype(np.float64), ((0, 0), (radius, radius), (0, 0)), mode="reflect"
    )
    csum = np.cumsum(padded, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1, :]), csum], axis=1)
    width = 2 * radius + 1
    return (csum[:, width:, :] - csum[:, :-width, :]) / width


class _BlurDenoiser(DenoiserHandle):
    """Blends the patch toward its horizontal box blur; the mix fraction
    comes from the schedule, so early (noisy) steps smooth aggressively and
    the final step is near-identity."""

    def __init__(self, radius: int, schedule: MockSchedule):
        if radius < 1:
            raise ConfigError(f"blur radius must be >= 1, got {radius}")
        self.radius = radius
        self.schedule = schedule
        self.backend_id = f"mock:blur:r{radius}"

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        if self.radius >= patch.width:
            raise ConfigError(
                f"blur radius {self.radius} must be smaller than patch width {patch.width}"
            )
        mix = self.schedule.mix_at(t)
        blurred = _box_blur_columns(patch.data, self.radius)
        out = (1.0 - mix) * patch.data.astype(np.float64) + mix * blurred
        return Canvas(out.astype(np.float32))


class _SeededNoiseDenoiser(DenoiserHandle):
    """Alpha-weighted shrink of the patch plus sigma-scaled Gaussian noise
    drawn from the request seed; deterministic per (patch, t, seed)."""

    backend_id = "mock:seeded"

    def __init__(self, schedule: MockSchedule):
        self.schedule = schedule

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        alpha = self.schedule.alpha_at(t)
        sigma = self.schedule.sigma_at(t)
        out = alpha * patch.data.astype(np.float64)
        if sigma > 0:
            noise = Rng(derive_seed(seed, t, "mock-noise")).generator().standard_normal(
                patch.shape, dtype=np.float32
            )
            out = out + sigma * noise.astype(np.float64)
        return Canvas(out.astype(np.float32))


def mock_identity() -> DenoiserHandle:
    """Returns every patch unchanged; fixed point of the blended step."""
    return _IdentityDenoiser()


def mock_constant(value: float) -> DenoiserHandle:
    """Returns a patch filled with `value` regardless of input."""
    return _ConstantDenoiser(value)


def mock_blur(radius: int, schedule: MockSchedule) -> DenoiserHandle:
    return _BlurDenoiser(radius, schedule)


def mock_seeded_noise(schedule: MockSchedule) -> DenoiserHandle:
    return _SeededNoiseDenoiser(schedule)


_MOCK_FACTORIES = {
    "identity": lambda arg, schedule: mock_identity(),
    "constant": lambda arg, schedule: mock_constant(float(arg if arg is not None else 0.0)),
    "blur": lambda arg, schedule: mock_blur(int(arg) if arg is not None else 2, schedule),
    "seeded": lambda arg, schedule: mock_seeded_noise(schedule),
}


def make_mock(spec: str, schedule: MockSchedule) -> DenoiserHandle:
    """Build a mock from a spec string: "identity", "constant:0.5", "blur:2",
    "seeded".  Used by the CLI's mock:NAME backend syntax."""
    name, _, arg = spec.partition(":")
    factory = _MOCK_FACTORIES.get(name)
    if factory is None:
        raise ConfigError(
            f"unknown mock backend {name!r}; expected one of {sorted(_MOCK_FACTORIES)}"
        )
    return factory(arg if arg else None, schedule)


# ---------------------------------------------------------------------------
# Concurrent dispatch wrapper


class ConcurrentDispatcher(DenoiserHandle):
    """Runs a handle's batch requests through a bounded thread pool.

    Results are reassembled by request index, so outputs are bit-identical
    to sequential dispatch for any completion order.
    """

    def __init__(self, inner: DenoiserHandle, max_inflight: int):
        if max_inflight < 1:
            raise ConfigError(f"max_inflight must be >= 1, got {max_inflight}")
        self.inner = inner
        self.max_inflight = max_inflight
        self.backend_id = inner.backend_id

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        return self.inner.denoise(patch, t, conditioning, seed, total_steps)

    def denoise_batch(self, requests_list):
        if self.max_inflight == 1 or len(requests_list) <= 1:
            return super().denoise_batch(requests_list)
        workers = min(self.max_inflight, len(requests_list))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    self.inner.denoise, r.patch, r.t, r.conditioning, r.seed, r.total_steps
                )
                for r in requests_list
            ]
            results = []
            for index, future in enumerate(futures):
                try:
                    results.append(future.result())
                except BackendError as err:
                    if err.request_index is None:
                        err.request_index = index
                    raise
                except Exception as exc:
                    err = BackendError(str(exc), request_index=index)
                    raise err from exc
        return results


def with_concurrency(handle: DenoiserHandle, max_inflight: int) -> DenoiserHandle:
    if max_inflight == 1:
        return handle
    return ConcurrentDispatcher(handle, max_inflight)


# ---------------------------------------------------------------------------
# Remote backend


@dataclass(frozen=True)
class BackendConfig:
    """Transport settings for a remote denoiser service."""

    endpoint: str
    timeout: float = 60.0
    max_inflight: int = 4
    retries: int = 2

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ConfigError("endpoint must be a non-empty URL")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.max_inflight < 1:
            raise ConfigError(f"max_inflight must be >= 1, got {self.max_inflight}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")


_RETRYABLE_STATUS = frozenset({429, 502, 503, 504})


def _encode_tensor(array: np.ndarray) -> str:
    return base64.b64encode(ptsr_dumps(array)).decode("ascii")


def _decode_tensor(text: str) -> np.ndarray:
    try:
        blob = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ProtocolError(f"tensor field is not valid base64: {exc}") from exc
    try:
        return ptsr_loads(blob)
    except FormatError as exc:
        raise ProtocolError(f"tensor payload is not valid PTSR: {exc}") from exc


class RemoteDenoiser(DenoiserHandle):
    """HTTP client for the denoiser wire protocol.

    Construction performs a health check against GET /health; denoise
    requests POST to /denoise and retry idempotently on timeouts,
    connection failures, and backpressure statuses.  Batches are
    multiplexed over a thread pool bounded by max_inflight, with responses
    mapped back to request order.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self._base = config.endpoint.rstrip("/")
        self.backend_id = config.endpoint
        self._local = threading.local()
        self.server_info = self._health_check()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _health_check(self) -> dict:
        url = self._base + "/health"
        try:
            response = self._session().get(url, timeout=self.config.timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransportError(f"health check failed: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(f"health check failed: HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProtocolError(f"health response is not JSON: {exc}") from exc

    def _post(self, route: str, payload: dict) -> dict:
        url = self._base + route
        failure: TransportError | None = None
        for attempt in range(self.config.retries + 1):
            if attempt > 0:
                time.sleep(min(0.1 * attempt, 1.0))
            try:
                response = self._session().post(url, json=payload, timeout=self.config.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                failure = TransportError(f"POST {route}: {exc}")
                continue
            if response.status_code in _RETRYABLE_STATUS:
                failure = TransportError(f"POST {route}: HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"POST {route}: HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"POST {route}: response is not JSON: {exc}") from exc
        assert failure is not None
        raise failure

    def denoise(self, patch, t, conditioning, seed, total_steps=0):
        payload = {
            "tensor": _encode_tensor(patch.data),
            "t": int(t),
            "total_steps": int(total_steps),
            "seed": int(seed),
        }
        if conditioning.embedding_id is not None:
            payload["embedding_id"] = conditioning.embedding_id
        if conditioning.prompt is not None:
            payload["prompt"] = conditioning.prompt
        body = self._post("/denoise", payload)
        if "tensor" not in body:
            raise ProtocolError("denoise response is missing the tensor field")
        arr = _decode_tensor(body["tensor"])
        if arr.shape != patch.shape:
            raise ProtocolError(
                f"denoise response shape {arr.shape} does not match request {patch.shape}"
            )
        if not np.isfinite(arr).all():
            raise DataError("denoise response holds non-finite values")
        return Canvas(arr)

    def denoise_batch(self, requests_list):
        if self.config.max_inflight == 1 or len(requests_list) <= 1:
            return super().denoise_batch(requests_list)
        workers = min(self.config.max_inflight, len(requests_list))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(self.denoise, r.patch, r.t, r.conditioning, r.seed, r.total_steps)
                for r in requests_list
            ]
            results = []
            for index, future in enumerate(futures):
                try:
                    results.append(future.result())
                except BackendError as err:
                    if err.request_index is None:
                        err.request_index = index
                    raise
                except Exception as exc:
                    err = BackendError(str(exc), request_index=index)
                    raise err from exc
        return results

    def embed_text(self, prompt: str) -> str:
        """Ask the backend to encode a prompt once; returns the embedding_id
        to echo on subsequent denoise requests."""
        body = self._post("/embed_text", {"prompt": prompt})
        if "embedding_id" not in body:
            raise ProtocolError("embed_text response is missing embedding_id")
        return str(body["embedding_id"])

    def embed_image(self, canvas: Canvas) -> np.ndarray:
        """Fetch the backend's rank-1 embedding vector for an image tensor."""
        body = self._post("/embed_image", {"tensor": _encode_tensor(canvas.data)})
        if "embedding" not in body:
            raise ProtocolError("embed_image response is missing the embedding field")
        arr = _decode_tensor(body["embedding"])
        if arr.ndim != 1:
            raise ProtocolError(f"embedding must be rank-1, got rank {arr.ndim}")
        if not np.isfinite(arr).all():
            raise DataError("embedding holds non-finite values")
        return arr


def remote_denoiser(config: BackendConfig) -> RemoteDenoiser:
    return RemoteDenoiser(config)
