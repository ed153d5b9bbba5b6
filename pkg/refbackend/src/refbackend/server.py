"""HTTP server exposing a latent model behind the denoiser wire protocol.

Endpoints (tensors travel as base64 of the PTSR container):

    GET  /health       -> {"model", "latent_channels", ...}
    POST /denoise      {"tensor", "t", "total_steps", "prompt"?,
                        "embedding_id"?, "seed"} -> {"tensor"}
    POST /embed_text   {"prompt"} -> {"embedding_id"}
    POST /embed_image  {"tensor"} -> {"embedding"}
    POST /decode       {"tensor"} -> {"tensor"}          (extension)

/decode is an extension beyond the core protocol: the engine works purely
in latent space and the protocol has no pixel route, so clients that want
pixels ask the model server to run its decoder.

Malformed requests get 400 with the offending field named; inference
failures get 500; a full queue gets 429.  Inference is serialized onto the
model with a lock (one accelerator), with a bounded admission queue
providing backpressure.  The server is stateless across requests except for
the prompt-embedding cache behind /embed_text.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import ptsr
from .models import AdapterError, ModelError, load_model


@dataclass
class ServerConfig:
    """What to serve and how."""

    model: str = "toy"
    lora_path: str | None = None
    device: str = "cpu"
    guidance_scale: float = 1.0
    scheduler: str = "toy-linear"
    port: int = 8411
    host: str = "127.0.0.1"
    queue_limit: int = 8
    latent_channels: int = 4

    def __post_init__(self) -> None:
        if self.queue_limit < 1:
            raise ValueError(f"queue_limit must be >= 1, got {self.queue_limit}")
        if self.lora_path is not None and not Path(self.lora_path).exists():
            raise AdapterError(f"adapter file not found: {self.lora_path}")


class DenoiseBody(BaseModel):
    tensor: str
    t: int
    total_steps: int = 0
    seed: int = 0
    prompt: str | None = None
    embedding_id: str | None = None


class EmbedTextBody(BaseModel):
    prompt: str


class TensorBody(BaseModel):
    tensor: str


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _decode_field(text: str, field_name: str) -> np.ndarray:
    try:
        blob = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ValueError(f"{field_name}: not valid base64 ({exc})") from exc
    try:
        return ptsr.loads(blob)
    except ptsr.PtsrError as exc:
        raise ValueError(f"{field_name}: {exc}") from exc


def _encode(array: np.ndarray) -> str:
    return base64.b64encode(ptsr.dumps(array)).decode("ascii")


def create_app(config: ServerConfig, model=None) -> FastAPI:
    """Build the service; `model` may be injected (otherwise loaded per config)."""
    if model is None:
        model = load_model(
            config.model,
            lora_path=config.lora_path,
            device=config.device,
            guidance_scale=config.guidance_scale,
            latent_channels=config.latent_channels,
        )

    app = FastAPI(title="refbackend", docs_url=None, redoc_url=None)
    app.state.model = model
    app.state.config = config
    app.state.inference_lock = threading.Lock()
    app.state.admission = threading.BoundedSemaphore(config.queue_limit)
    app.state.prompt_cache: dict[str, str] = {}
    app.state.cache_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = ", ".join(
            ".".join(str(part) for part in err.get("loc", ()) if part != "body")
            or "body"
            for err in exc.errors()
        )
        return _error(400, f"malformed request: {fields}")

    @app.get("/health")
    def health():
        return {
            "model": model.name,
            "latent_channels": model.latent_channels,
            "scheduler": config.scheduler,
            "guidance_scale": config.guidance_scale,
            "lora": getattr(model, "adapter_tag", None),
            "queue_limit": config.queue_limit,
        }

    @app.post("/denoise")
    def denoise(body: DenoiseBody):
        try:
            latent = _decode_field(body.tensor, "tensor")
        except ValueError as exc:
            return _error(400, str(exc))
        if latent.ndim != 3:
            return _error(400, f"tensor: expected a rank-3 latent, got rank {latent.ndim}")
        if body.t < 1:
            return _error(400, "t: must be >= 1")
        prompt = body.prompt
        if body.embedding_id is not None:
            with app.state.cache_lock:
                prompt = app.state.prompt_cache.get(body.embedding_id)
            if prompt is None:
                return _error(400, f"embedding_id: unknown id {body.embedding_id!r}")
        if not app.state.admission.acquire(blocking=False):
            return _error(429, "queue full, retry later")
        try:
            with app.state.inference_lock:
                out = model.step(latent, body.t, body.total_steps, prompt, body.seed)
        except ModelError as exc:
            return _error(500, str(exc))
        finally:
            app.state.admission.release()
        if out.shape != latent.shape:
            return _error(500, f"model returned shape {out.shape} for input {latent.shape}")
        if not np.isfinite(out).all():
            return _error(500, "model produced non-finite values")
        return {"tensor": _encode(out)}

    @app.post("/embed_text")
    def embed_text(body: EmbedTextBody):
        digest = hashlib.blake2b(body.prompt.encode("utf-8"), digest_size=12).hexdigest()
        embedding_id = f"emb-{digest}"
        with app.state.cache_lock:
            app.state.prompt_cache[embedding_id] = body.prompt
        return {"embedding_id": embedding_id}

    @app.post("/embed_image")
    def embed_image(body: TensorBody):
        try:
            array = _decode_field(body.tensor, "tensor")
        except ValueError as exc:
            return _error(400, str(exc))
        try:
            vector = model.embed_image(array)
        except ModelError as exc:
            return _error(500, str(exc))
        if not np.isfinite(vector).all():
            return _error(500, "embedding holds non-finite values")
        return {"embedding": _encode(vector)}

    @app.post("/decode")
    def decode(body: TensorBody):
        try:
            latent = _decode_field(body.tensor, "tensor")
        except ValueError as exc:
            return _error(400, str(exc))
        if latent.ndim != 3:
            return _error(400, f"tensor: expected a rank-3 latent, got rank {latent.ndim}")
        try:
            with app.state.inference_lock:
                pixels = model.decode(latent)
        except ModelError as exc:
            return _error(500, str(exc))
        if not np.isfinite(pixels).all():
            return _error(500, "decoder produced non-finite values")
        return {"tensor": _encode(pixels)}

    return app


def serve(config: ServerConfig) -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")


def entry() -> None:
    parser = argparse.ArgumentParser(prog="refbackend", description=__doc__)
    parser.add_argument("--model", default="toy", help="toy[:cN] or diffusers:<id-or-path>")
    parser.add_argument("--lora", dest="lora_path", help="optional adapter weights")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--guidance-scale", type=float, default=1.0)
    parser.add_argument("--scheduler", default="toy-linear")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8411)
    parser.add_argument("--queue-limit", type=int, default=8)
    parser.add_argument("--latent-channels", type=int, default=4)
    args = parser.parse_args()
    serve(
        ServerConfig(
            model=args.model,
            lora_path=args.lora_path,
            device=args.device,
            guidance_scale=args.guidance_scale,
            scheduler=args.scheduler,
            host=args.host,
            port=args.port,
            queue_limit=args.queue_limit,
            latent_channels=args.latent_channels,
        )
    )


if __name__ == "__main__":
    entry()
