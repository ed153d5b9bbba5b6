"""Shared test helpers: brute-force oracles and HTTP stub servers.

The oracles deliberately use naive scalar loops so they stay independent of
the vectorized library paths they check.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np


def coverage_oracle(
    canvas_width, window_width, stride, stitch_passes=0, concat_order="rightmost-first"
):
    """Per-column weight by looping over every (window, column) pair."""
    counts = [0.0] * canvas_width
    start = 0
    while start + window_width <= canvas_width:
        for col in range(start, start + window_width):
            counts[col] += 1.0
        start += stride
    if stitch_passes:
        half = window_width // 2
        for col in range(canvas_width - half, canvas_width):
            counts[col] += float(stitch_passes)
        for col in range(half):
            counts[col] += float(stitch_passes)
    return np.array(counts, dtype=np.float64)


def blend_oracle(
    canvas_shape,
    window_width,
    window_patches,
    stitch_patches=(),
    half=0,
    concat_order="rightmost-first",
):
    """Per-cell weighted mean by direct scalar gathering.

    window_patches: list of (start, ndarray) denoised window outputs.
    stitch_patches: list of ndarray denoised stitch-block outputs (each of
    width 2 * half).
    """
    height, canvas_width, channels = canvas_shape
    out = np.zeros(canvas_shape, dtype=np.float64)
    for y in range(height):
        for x in range(canvas_width):
            for ch in range(channels):
                total = 0.0
                weight = 0.0
                for start, patch in window_patches:
                    if start <= x < start + window_width:
                        total += float(patch[y, x - start, ch])
                        weight += 1.0
                for block in stitch_patches:
                    if concat_order == "rightmost-first":
                        if x >= canvas_width - half:
                            total += float(block[y, x - (canvas_width - half), ch])
                            weight += 1.0
                        elif x < half:
                            total += float(block[y, half + x, ch])
                            weight += 1.0
                    else:
                        if x < half:
                            total += float(block[y, x, ch])
                            weight += 1.0
                        elif x >= canvas_width - half:
                            total += float(block[y, half + (x - (canvas_width - half)), ch])
                            weight += 1.0
                out[y, x, ch] = total / weight
    return out


class _QuietServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        pass  # clients time out on purpose in some tests


class StubServer:
    """Minimal JSON-over-HTTP stub.

    handler_map maps (method, path) to a callable(body_dict) -> (status,
    payload_dict).  Handlers run on per-request threads, so tests can
    observe concurrency with their own counters.
    """

    def __init__(self, handler_map):
        routes = dict(handler_map)

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _dispatch(self, method):
                fn = routes.get((method, self.path))
                if fn is None:
                    self.send_response(404)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                body = {}
                if method == "POST":
                    length = int(self.headers.get("Content-Length", 0))
                    raw = self.rfile.read(length)
                    body = json.loads(raw) if raw else {}
                status, payload = fn(body)
                data = json.dumps(payload).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

        self.server = _QuietServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def endpoint(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        return False


def health_ok(_body=None):
    return 200, {"model": "stub", "latent_channels": 4}


def echo_denoise(body):
    return 200, {"tensor": body["tensor"]}
