"""Latent models served behind the wire protocol.

Two families share one interface:

* ToyLatentModel — a self-contained deterministic model: one "scheduler
  step" blends the latent toward a spatially smoothed, channel-mixed,
  prompt-biased version of itself, with a little seeded noise early in the
  run.  It needs no weights, runs on CPU, and exhibits the properties the
  engine cares about (determinism, spatial mixing, prompt sensitivity), so
  the full client/server path can be exercised end to end.  Optional
  LoRA-style adapters (two low-rank matrices) perturb its channel mixer.

* DiffusersLatentModel — wraps a pretrained latent diffusion pipeline
  (loaded via diffusers) and performs one real scheduler step per request.
  Import-guarded: constructing it without torch/diffusers installed raises
  a clear error.  The pipeline object is injectable for testing.

Both decode latents to pixels with horizontal wraparound awareness: a
2:1 equirectangular panorama is periodic in x, so upsampling interpolates
across the wrap instead of clamping at the image border.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class ModelError(RuntimeError):
    """Model loading or inference failed."""


class AdapterError(ValueError):
    """Adapter file missing or incompatible with the base model."""


def _prompt_digest(prompt: str, size: int = 8) -> np.ndarray:
    """Small deterministic vector in [-1, 1] derived from the prompt text."""
    raw = hashlib.blake2b(prompt.encode("utf-8"), digest_size=size).digest()
    return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 127.5) / 127.5


def _seeded_normal(seed_parts: tuple, shape) -> np.ndarray:
    digest = hashlib.blake2b(repr(seed_parts).encode(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(shape)


def _box_blur_2d(data: np.ndarray, radius: int) -> np.ndarray:
    """Separable box mean with mirror padding, in float64."""
    out = data.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        csum = np.cumsum(padded, axis=axis)
        zero = np.zeros_like(np.take(csum, [0], axis=axis))
        csum = np.concatenate([zero, csum], axis=axis)
        width = 2 * radius + 1
        upper = np.take(csum, range(width, csum.shape[axis]), axis=axis)
        lower = np.take(csum, range(0, csum.shape[axis] - width), axis=axis)
        out = (upper - lower) / width
    return out


def load_adapter(path, channels: int) -> np.ndarray:
    """Load a LoRA-style adapter: npz with matrices A (C, r) and B (r, C).

    Returns the channel-mixer delta A @ B; shape mismatches against the
    base model raise AdapterError.
    """
    try:
        with np.load(path) as payload:
            down = np.asarray(payload["A"], dtype=np.float64)
            up = np.asarray(payload["B"], dtype=np.float64)
    except FileNotFoundError as exc:
        raise AdapterError(f"adapter file not found: {path}") from exc
    except (KeyError, ValueError, OSError) as exc:
        raise AdapterError(f"adapter file {path} is not a valid A/B pair: {exc}") from exc
    if down.ndim != 2 or up.ndim != 2 or down.shape[1] != up.shape[0]:
        raise AdapterError(
            f"adapter ranks do not chain: A {down.shape} @ B {up.shape}"
        )
    if down.shape[0] != channels or up.shape[1] != channels:
        raise AdapterError(
            f"adapter maps {down.shape[0]} -> {up.shape[1]} channels, "
            f"base model has {channels}"
        )
    return down @ up


def save_adapter(path, down: np.ndarray, up: np.ndarray) -> None:
    np.savez(path, A=np.asarray(down, dtype=np.float32), B=np.asarray(up, dtype=np.float32))


def random_adapter(channels: int, rank: int, seed: int, scale: float = 0.05):
    """Generate a small random low-rank pair for demos and tests."""
    down = _seeded_normal(("adapter-A", seed), (channels, rank)) * scale
    up = _seeded_normal(("adapter-B", seed), (rank, channels)) * scale
    return down, up


@dataclass
class ToyLatentModel:
    """Deterministic stand-in for a fine-tuned latent diffusion backbone."""

    latent_channels: int = 4
    blur_radius: int = 2
    mix_peak: float = 0.9
    # Small but nonzero: enough to exercise per-pass seed derivation without
    # swamping the wrap continuity the stitch passes establish.
    noise_peak: float = 0.005
    adapter_delta: np.ndarray | None = None
    adapter_tag: str | None = None

    @property
    def name(self) -> str:
        base = f"toy-blur-c{self.latent_channels}"
        return f"{base}+lora" if self.adapter_delta is not None else base

    def _mixer(self) -> np.ndarray:
        mixer = np.eye(self.latent_channels)
        if self.adapter_delta is not None:
            mixer = mixer + self.adapter_delta
        return mixer

    def step(self, latent: np.ndarray, t: int, total_steps: int,
             prompt: str | None, seed: int) -> np.ndarray:
        if latent.ndim != 3 or latent.shape[2] != self.latent_channels:
            raise ModelError(
                f"latent must be (H, W, {self.latent_channels}), got {latent.shape}"
            )
        total = max(total_steps, t, 1)
        progress = t / total  # 1 at the noisiest step, ~0 at the last
        mix = self.mix_peak * progress
        smoothed = _box_blur_2d(latent, self.blur_radius) @ self._mixer()
        if prompt:
            bias = _prompt_digest(prompt, self.latent_channels) * 0.02 * progress
            smoothed = smoothed + bias
        out = (1.0 - mix) * latent.astype(np.float64) + mix * smoothed
        sigma = self.noise_peak * progress * progress
        if sigma > 0:
            out = out + sigma * _seeded_normal(("toy-step", seed, t), latent.shape)
        return out.astype(np.float32)

    def decode(self, latent: np.ndarray, factor: int = 8) -> np.ndarray:
        """Latent -> RGB pixels at `factor`x resolution.

        Interpolation is circular in x (an equirectangular panorama is
        periodic horizontally) and clamped in y, so the decoded wrap seam
        is exactly as continuous as the latent content, no more, no less.
        """
        if latent.ndim != 3:
            raise ModelError(f"latent must be rank-3, got rank {latent.ndim}")
        height, width, channels = latent.shape
        rgb_map = _seeded_normal(("toy-decode-map",), (channels, 3)) / np.sqrt(channels)
        base = latent.astype(np.float64) @ rgb_map

        ys = (np.arange(height * factor) + 0.5) / factor - 0.5
        xs = (np.arange(width * factor) + 0.5) / factor - 0.5
        y0 = np.clip(np.floor(ys).astype(int), 0, height - 1)
        y1 = np.clip(y0 + 1, 0, height - 1)
        wy = np.clip(ys - np.floor(ys), 0.0, 1.0)
        wy[ys < 0] = 0.0
        x0 = np.floor(xs).astype(int) % width
        x1 = (x0 + 1) % width
        wx = xs - np.floor(xs)

        top = base[y0][:, x0] * (1 - wx)[None, :, None] + base[y0][:, x1] * wx[None, :, None]
        bottom = base[y1][:, x0] * (1 - wx)[None, :, None] + base[y1][:, x1] * wx[None, :, None]
        pixels = top * (1 - wy)[:, None, None] + bottom * wy[:, None, None]
        return pixels.astype(np.float32)

    def embed_image(self, array: np.ndarray) -> np.ndarray:
        """Deterministic pooled-statistics embedding (rank-1)."""
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3:
            raise ModelError(f"image must be rank 2 or 3, got rank {array.ndim}")
        data = array.astype(np.float64)
        height, width = data.shape[:2]
        rows = np.array_split(np.arange(height), 4)
        cols = np.array_split(np.arange(width), 8)
        features = []
        for row_index in rows:
            for col_index in cols:
                cell = data[np.ix_(row_index, col_index)]
                features.extend([cell.mean(), cell.std()])
        features.extend([data.mean(), data.std(), float(np.abs(np.diff(data, axis=1)).mean())])
        return np.asarray(features, dtype=np.float32)


class DiffusersLatentModel:
    """One-scheduler-step-per-request adapter around a diffusers pipeline.

    `pipeline` may be a preconstructed (or fake) pipeline exposing `unet`,
    `scheduler`, `vae`, and `encode_prompt`-style text encoding; when it is
    None the class loads `model_id` from disk via diffusers, which requires
    the optional [real] dependencies and local checkpoint files.
    """

    def __init__(self, model_id: str, lora_path=None, device: str = "cpu",
                 guidance_scale: float = 1.0, pipeline=None):
        self.model_id = model_id
        self.device = device
        self.guidance_scale = guidance_scale
        self.adapter_tag = None
        if pipeline is None:
            pipeline = self._load_pipeline(model_id, device)
        self.pipeline = pipeline
        self.latent_channels = int(
            getattr(getattr(pipeline, "unet", None), "config", {}).get("in_channels", 4)
            if isinstance(getattr(getattr(pipeline, "unet", None), "config", None), dict)
            else getattr(getattr(getattr(pipeline, "unet", None), "config", None), "in_channels", 4)
        )
        if lora_path is not None:
            self._load_lora(lora_path)

    @property
    def name(self) -> str:
        base = f"diffusers:{self.model_id}"
        return f"{base}+lora" if self.adapter_tag else base

    @staticmethod
    def _load_pipeline(model_id: str, device: str):
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise ModelError(
                "the diffusers backend needs the [real] extra (torch + diffusers); "
                "install them or use the toy model"
            ) from exc
        try:
            pipeline = StableDiffusionPipeline.from_pretrained(model_id)
        except Exception as exc:
            raise ModelError(f"cannot load pipeline {model_id!r}: {exc}") from exc
        return pipeline.to(device)

    def _load_lora(self, lora_path) -> None:
        loader = getattr(self.pipeline, "load_lora_weights", None)
        if loader is None:
            raise AdapterError("pipeline does not support LoRA adapters")
        try:
            loader(str(lora_path))
        except Exception as exc:
            raise AdapterError(f"cannot load adapter {lora_path}: {exc}") from exc
        self.adapter_tag = str(lora_path)

    def step(self, latent: np.ndarray, t: int, total_steps: int,
             prompt: str | None, seed: int) -> np.ndarray:
        import torch

        pipe = self.pipeline
        pipe.scheduler.set_timesteps(total_steps)
        timesteps = pipe.scheduler.timesteps
        timestep = timesteps[len(timesteps) - t]
        sample = torch.from_numpy(
            np.ascontiguousarray(latent.transpose(2, 0, 1))[None]
        ).to(self.device)
        embeddings = pipe.encode_prompt_text(prompt or "")
        with torch.no_grad():
            noise_pred = pipe.unet(sample, timestep, encoder_hidden_states=embeddings).sample
            generator = torch.Generator(device="cpu").manual_seed(seed % 2**63)
            stepped = pipe.scheduler.step(
                noise_pred, timestep, sample, generator=generator
            ).prev_sample
        return stepped[0].cpu().numpy().transpose(1, 2, 0).astype(np.float32)

    def decode(self, latent: np.ndarray, factor: int = 8) -> np.ndarray:
        import torch

        sample = torch.from_numpy(
            np.ascontiguousarray(latent.transpose(2, 0, 1))[None]
        ).to(self.device)
        with torch.no_grad():
            image = self.pipeline.vae.decode(sample / self.pipeline.vae.config.scaling_factor).sample
        pixels = image[0].cpu().numpy().transpose(1, 2, 0)
        return ((pixels + 1.0) / 2.0).clip(0.0, 1.0).astype(np.float32)

    def embed_image(self, array: np.ndarray) -> np.ndarray:
        embedder = getattr(self.pipeline, "embed_image", None)
        if embedder is not None:
            return np.asarray(embedder(array), dtype=np.float32).reshape(-1)
        # Fall back to the pooled-statistics embedding so the evaluation
        # endpoints work even without a vision tower attached.
        return ToyLatentModel(latent_channels=self.latent_channels).embed_image(array)


def load_model(spec: str, lora_path=None, device: str = "cpu",
               guidance_scale: float = 1.0, latent_channels: int = 4,
               pipeline=None):
    """Model registry: "toy" (optionally "toy:cN") or "diffusers:<id-or-path>"."""
    if spec == "toy" or spec.startswith("toy:"):
        channels = latent_channels
        if spec.startswith("toy:c"):
            channels = int(spec[len("toy:c"):])
        model = ToyLatentModel(latent_channels=channels)
        if lora_path is not None:
            model.adapter_delta = load_adapter(lora_path, channels)
            model.adapter_tag = str(lora_path)
        return model
    if spec.startswith("diffusers:"):
        return DiffusersLatentModel(
            spec[len("diffusers:"):], lora_path=lora_path, device=device,
            guidance_scale=guidance_scale, pipeline=pipeline,
        )
    raise ModelError(f"unknown model spec {spec!r}; expected toy[,:cN] or diffusers:<id>")
