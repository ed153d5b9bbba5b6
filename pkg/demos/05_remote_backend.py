"""Driving the sampler through the HTTP wire protocol.

Starts a minimal in-process model server (here: a blur model behind the
protocol), connects the remote client to it, and runs a generation with
requests multiplexed over four in-flight connections.  The same client
talks to any real model server that implements these four endpoints:

    GET  /health       -> {"model": ..., "latent_channels": ...}
    POST /denoise      {"tensor", "t", "total_steps", "prompt"?,
                        "embedding_id"?, "seed"} -> {"tensor"}
    POST /embed_text   {"prompt"} -> {"embedding_id"}
    POST /embed_image  {"tensor"} -> {"embedding"}

Tensors travel as base64 of the PTSR container.
"""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from stitchpano import (
    BackendConfig,
    Conditioning,
    MockSchedule,
    SamplerConfig,
    mock_blur,
    ptsr_dumps,
    ptsr_loads,
    remote_denoiser,
    run,
    seam_discontinuity,
)
from stitchpano.tensors import Canvas

STEPS = 12
MODEL = mock_blur(2, MockSchedule.linear(STEPS))
CONDITIONING = Conditioning(prompt="360-degree panoramic image, a harbor at dusk")


class ProtocolHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _reply(self, status, payload):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, {"model": "demo-blur", "latent_channels": 4})
        else:
            self._reply(404, {"error": "no such route"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        if self.path == "/denoise":
            patch = Canvas(ptsr_loads(base64.b64decode(body["tensor"])))
            out = MODEL.denoise(
                patch, body["t"], CONDITIONING, body.get("seed", 0),
                body.get("total_steps", 0),
            )
            self._reply(200, {"tensor": base64.b64encode(ptsr_dumps(out.data)).decode()})
        elif self.path == "/embed_text":
            self._reply(200, {"embedding_id": f"emb-{abs(hash(body['prompt'])) % 10**8}"})
        elif self.path == "/embed_image":
            arr = ptsr_loads(base64.b64decode(body["tensor"]))
            vec = arr.mean(axis=(0, 1)).astype(np.float32)
            self._reply(200, {"embedding": base64.b64encode(ptsr_dumps(vec)).decode()})
        else:
            self._reply(404, {"error": "no such route"})


server = ThreadingHTTPServer(("127.0.0.1", 0), ProtocolHandler)
thread = threading.Thread(target=server.serve_forever, daemon=True)
thread.start()
endpoint = f"http://127.0.0.1:{server.server_address[1]}"
print(f"model server listening at {endpoint}")

try:
    client = remote_denoiser(BackendConfig(endpoint=endpoint, timeout=30.0, max_inflight=4))
    print(f"health: {client.server_info}")

    embedding_id = client.embed_text(CONDITIONING.prompt)
    print(f"prompt registered as {embedding_id}")

    config = SamplerConfig(
        height=32, window_width=64, canvas_width=128, stride=16,
        steps=STEPS, seed=11, channels=4,
    )
    result = run(config, client, Conditioning(embedding_id=embedding_id))
    print(f"generated {result.jsyn.shape} panorama over HTTP "
          f"({config.tiling_plan().n} windows + 2 stitch passes per step)")
    print(f"seam ratio: {seam_discontinuity(result.jsyn):.3f}")
    print(f"mean step wall time: {np.mean(result.step_seconds) * 1000:.1f} ms")

    vec = client.embed_image(result.jsyn)
    print(f"panorama embedding: {vec.shape[0]} dims, first values {np.round(vec[:3], 3)}")
finally:
    server.shutdown()
    server.server_close()
