"""Mock denoisers, the schedule type, concurrency wrapper, and remote client."""

import base64
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import StubServer, echo_denoise, health_ok
from stitchpano.backends import (
    BackendConfig,
    MockSchedule,
    make_mock,
    mock_blur,
    mock_constant,
    mock_identity,
    mock_seeded_noise,
    remote_denoiser,
    with_concurrency,
    _box_blur_columns,
)
from stitchpano.errors import (
    BackendError,
    ConfigError,
    DataError,
    ProtocolError,
    TransportError,
)
from stitchpano.sampler import Conditioning, DenoiseRequest
from stitchpano.tensors import Canvas, Rng, gaussian_fill, ptsr_dumps, ptsr_loads

COND = Conditioning(prompt="scene")


def reqs(patches, t=2, seed0=0, total=5):
    return [DenoiseRequest(p, t, COND, seed0 + i, total) for i, p in enumerate(patches)]


class TestMockSchedule:
    def test_linear_endpoints(self):
        s = MockSchedule.linear(10)
        assert s.alpha_at(1) == 1.0
        assert s.sigma_at(1) == 0.0
        assert s.alpha_at(10) == pytest.approx(0.1)
        assert s.sigma_at(10) == pytest.approx(1.0)
        assert s.mix_at(1) == 0.0

    def test_single_step(self):
        s = MockSchedule.linear(1)
        assert s.steps == 1 and s.alpha_at(1) == 1.0 and s.sigma_at(1) == 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            MockSchedule(np.array([0.0, 1.0]), np.array([0.0, 0.0]))  # alpha <= 0
        with pytest.raises(ConfigError):
            MockSchedule(np.array([1.0, 0.5]), np.array([0.0, -1.0]))  # sigma < 0
        with pytest.raises(ConfigError):
            MockSchedule(np.array([0.5, 1.0]), np.array([0.0, 0.0]))  # alpha increasing with t
        with pytest.raises(ConfigError):
            MockSchedule.linear(10).alpha_at(11)


class TestMockIdentityAndConstant:
    def test_identity_returns_same_patch(self):
        patch = gaussian_fill(4, 8, 2, Rng(1))
        handle = mock_identity()
        assert handle.denoise(patch, 5, COND, 0).equals(patch)

    def test_identity_is_t_independent(self):
        patch = gaussian_fill(4, 8, 2, Rng(2))
        handle = mock_identity()
        assert handle.denoise(patch, 50, COND, 0).equals(handle.denoise(patch, 1, COND, 0))

    def test_constant_fills_value(self):
        out = mock_constant(0.5).denoise(gaussian_fill(4, 8, 2, Rng(3)), 2, COND, 0)
        assert np.all(out.data == 0.5)


class TestMockBlur:
    def test_constant_patch_unchanged(self):
        schedule = MockSchedule.linear(10)
        out = mock_blur(2, schedule).denoise(Canvas.constant(4, 16, 2, 1.25), 10, COND, 0)
        assert np.allclose(out.data, 1.25, atol=1e-6)

    def test_zero_mix_is_identity(self):
        schedule = MockSchedule.linear(10)  # t=1 has sigma 0
        patch = gaussian_fill(4, 16, 2, Rng(4))
        assert mock_blur(2, schedule).denoise(patch, 1, COND, 0).equals(patch)

    def test_impulse_spreads_to_thirds(self):
        # Box kernel of width 3 on an interior impulse: 1/3 in each column.
        data = np.zeros((1, 9, 1), dtype=np.float64)
        data[0, 4, 0] = 1.0
        blurred = _box_blur_columns(data, 1)
        assert blurred[0, 3, 0] == pytest.approx(1.0 / 3.0)
        assert blurred[0, 4, 0] == pytest.approx(1.0 / 3.0)
        assert blurred[0, 5, 0] == pytest.approx(1.0 / 3.0)
        assert blurred[0, 2, 0] == 0.0 and blurred[0, 6, 0] == 0.0
        # Full-mix schedule pushes the denoiser output to the blur itself.
        schedule = MockSchedule(np.array([1e-9]), np.array([1.0]))
        patch = Canvas(data.astype(np.float32))
        out = mock_blur(1, schedule).denoise(patch, 1, COND, 0)
        assert np.allclose(out.data[0, 3:6, 0], 1.0 / 3.0, atol=1e-6)

    def test_radius_validation(self):
        schedule = MockSchedule.linear(5)
        with pytest.raises(ConfigError):
            mock_blur(0, schedule)
        handle = mock_blur(8, schedule)
        with pytest.raises(ConfigError):
            handle.denoise(Canvas.constant(2, 8, 1, 0.0), 1, COND, 0)


class TestMockSeededNoise:
    def test_deterministic_per_request(self):
        schedule = MockSchedule.linear(10)
        handle = mock_seeded_noise(schedule)
        patch = gaussian_fill(4, 8, 2, Rng(5))
        a = handle.denoise(patch, 7, COND, 42)
        b = handle.denoise(patch, 7, COND, 42)
        assert a.equals(b)

    def test_zero_sigma_is_pure_shrink(self):
        schedule = MockSchedule.linear(10)
        handle = mock_seeded_noise(schedule)
        patch = gaussian_fill(4, 8, 2, Rng(6))
        out = handle.denoise(patch, 1, COND, 42)  # sigma(1) = 0, alpha(1) = 1
        assert out.equals(patch)

    def test_different_pass_seeds_differ(self):
        schedule = MockSchedule.linear(10)
        handle = mock_seeded_noise(schedule)
        patch = gaussian_fill(4, 8, 2, Rng(7))
        a = handle.denoise(patch, 5, COND, 1)
        b = handle.denoise(patch, 5, COND, 2)
        assert not a.equals(b)


class TestMockContracts:
    @settings(max_examples=20, deadline=None)
    @given(
        h=st.integers(1, 6),
        w=st.integers(4, 12),
        c=st.integers(1, 3),
        t=st.integers(1, 5),
        seed=st.integers(0, 2**32),
    )
    def test_shape_and_determinism(self, h, w, c, t, seed):
        schedule = MockSchedule.linear(5)
        patch = gaussian_fill(h, w, c, Rng(seed))
        for handle in (
            mock_identity(),
            mock_constant(0.25),
            mock_blur(min(2, w - 1), schedule),
            mock_seeded_noise(schedule),
        ):
            out = handle.denoise(patch, t, COND, seed)
            assert out.shape == patch.shape
            assert out.equals(handle.denoise(patch, t, COND, seed))

    def test_make_mock_parsing(self):
        schedule = MockSchedule.linear(5)
        assert make_mock("identity", schedule).backend_id == "mock:identity"
        assert make_mock("constant:0.5", schedule).backend_id == "mock:constant:0.5"
        assert make_mock("blur:3", schedule).backend_id == "mock:blur:r3"
        assert make_mock("seeded", schedule).backend_id == "mock:seeded"
        with pytest.raises(ConfigError):
            make_mock("nope", schedule)


class TestConcurrentDispatcher:
    def test_matches_sequential_bit_exactly(self):
        schedule = MockSchedule.linear(6)
        inner = mock_seeded_noise(schedule)
        patches = [gaussian_fill(4, 8, 2, Rng(i)) for i in range(12)]
        sequential = inner.denoise_batch(reqs(patches))
        for inflight in (2, 5, 16):
            wrapped = with_concurrency(inner, inflight)
            parallel = wrapped.denoise_batch(reqs(patches))
            assert all(a.equals(b) for a, b in zip(sequential, parallel))

    def test_failure_carries_request_index(self):
        class Failing(mock_identity().__class__):
            def denoise(self, patch, t, conditioning, seed, total_steps=0):
                if seed == 3:
                    raise RuntimeError("boom")
                return patch

        wrapped = with_concurrency(Failing(), 4)
        patches = [gaussian_fill(2, 4, 1, Rng(i)) for i in range(6)]
        with pytest.raises(BackendError) as excinfo:
            wrapped.denoise_batch(reqs(patches))
        assert excinfo.value.request_index == 3

    def test_inflight_one_returns_same_handle(self):
        handle = mock_identity()
        assert with_concurrency(handle, 1) is handle


class TestRemoteDenoiser:
    def test_health_check_and_echo(self):
        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): echo_denoise}) as stub:
            client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
            assert client.server_info["model"] == "stub"
            patch = gaussian_fill(4, 8, 3, Rng(1))
            out = client.denoise(patch, 3, COND, 7, total_steps=10)
            assert out.equals(patch)

    def test_health_failure_blocks_construction(self):
        def sick(_body):
            return 500, {"error": "down"}

        with StubServer({("GET", "/health"): sick}) as stub:
            with pytest.raises(TransportError):
                remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))

    def test_unreachable_endpoint(self):
        with pytest.raises(TransportError):
            remote_denoiser(BackendConfig(endpoint="http://127.0.0.1:1", timeout=0.5))

    def test_batch_preserves_order_under_shuffled_completion(self):
        # Server-side staggered delays force out-of-order completion; the
        # batch of 9 window requests must still map back by request index.
        lock = threading.Lock()
        arrival = {"count": 0}

        def delayed_echo(body):
            with lock:
                order = arrival["count"]
                arrival["count"] += 1
            time.sleep(0.01 * ((9 - order) % 9))
            return 200, {"tensor": body["tensor"]}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): delayed_echo}) as stub:
            client = remote_denoiser(
                BackendConfig(endpoint=stub.endpoint, timeout=10.0, max_inflight=9)
            )
            patches = [Canvas.constant(2, 4, 1, float(i)) for i in range(9)]
            results = client.denoise_batch(reqs(patches))
            for i, out in enumerate(results):
                assert np.all(out.data == float(i))

    def test_inflight_never_exceeds_limit(self):
        lock = threading.Lock()
        state = {"current": 0, "peak": 0}

        def counting_echo(body):
            with lock:
                state["current"] += 1
                state["peak"] = max(state["peak"], state["current"])
            time.sleep(0.02)
            with lock:
                state["current"] -= 1
            return 200, {"tensor": body["tensor"]}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): counting_echo}) as stub:
            client = remote_denoiser(
                BackendConfig(endpoint=stub.endpoint, timeout=10.0, max_inflight=3)
            )
            patches = [gaussian_fill(2, 4, 1, Rng(i)) for i in range(12)]
            client.denoise_batch(reqs(patches))
        assert state["peak"] <= 3

    def test_timeout_then_retry_succeeds(self):
        calls = {"n": 0}
        lock = threading.Lock()

        def slow_once(body):
            with lock:
                calls["n"] += 1
                first = calls["n"] == 1
            if first:
                time.sleep(1.5)
            return 200, {"tensor": body["tensor"]}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): slow_once}) as stub:
            client = remote_denoiser(
                BackendConfig(endpoint=stub.endpoint, timeout=0.5, retries=2)
            )
            patch = gaussian_fill(2, 4, 1, Rng(2))
            out = client.denoise(patch, 1, COND, 0)
            assert out.equals(patch)
        assert calls["n"] >= 2

    def test_timeout_without_retries_raises_transport_error(self):
        def always_slow(body):
            time.sleep(1.5)
            return 200, {"tensor": body["tensor"]}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): always_slow}) as stub:
            client = remote_denoiser(
                BackendConfig(endpoint=stub.endpoint, timeout=0.3, retries=0)
            )
            with pytest.raises(TransportError):
                client.denoise(gaussian_fill(2, 4, 1, Rng(3)), 1, COND, 0)

    def test_shape_mismatch_is_protocol_error(self):
        def wrong_shape(_body):
            other = np.zeros((2, 5, 1), dtype=np.float32)
            return 200, {"tensor": base64.b64encode(ptsr_dumps(other)).decode()}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): wrong_shape}) as stub:
            client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
            with pytest.raises(ProtocolError, match="shape"):
                client.denoise(gaussian_fill(2, 4, 1, Rng(4)), 1, COND, 0)

    def test_non_finite_response_is_data_error(self):
        def nan_tensor(body):
            arr = ptsr_loads(base64.b64decode(body["tensor"]))
            arr[0, 0, 0] = np.nan
            return 200, {"tensor": base64.b64encode(ptsr_dumps(arr)).decode()}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): nan_tensor}) as stub:
            client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
            with pytest.raises(DataError):
                client.denoise(gaussian_fill(2, 4, 1, Rng(5)), 1, COND, 0)

    def test_malformed_payload_is_protocol_error(self):
        def garbage(_body):
            return 200, {"tensor": base64.b64encode(b"XXXXjunk").decode()}

        def not_base64(_body):
            return 200, {"tensor": "!!!not-base64!!!"}

        def missing(_body):
            return 200, {"other": 1}

        for handler in (garbage, not_base64, missing):
            with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): handler}) as stub:
                client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
                with pytest.raises(ProtocolError):
                    client.denoise(gaussian_fill(2, 4, 1, Rng(6)), 1, COND, 0)

    def test_server_error_is_protocol_error(self):
        def error(_body):
            return 400, {"error": "bad field"}

        with StubServer({("GET", "/health"): health_ok, ("POST", "/denoise"): error}) as stub:
            client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
            with pytest.raises(ProtocolError, match="400"):
                client.denoise(gaussian_fill(2, 4, 1, Rng(7)), 1, COND, 0)

    def test_embed_endpoints(self):
        def embed_text(body):
            return 200, {"embedding_id": f"id-{len(body['prompt'])}"}

        def embed_image(body):
            arr = ptsr_loads(base64.b64decode(body["tensor"]))
            vec = arr.mean(axis=(0, 1)).astype(np.float32)
            return 200, {"embedding": base64.b64encode(ptsr_dumps(vec)).decode()}

        routes = {
            ("GET", "/health"): health_ok,
            ("POST", "/embed_text"): embed_text,
            ("POST", "/embed_image"): embed_image,
        }
        with StubServer(routes) as stub:
            client = remote_denoiser(BackendConfig(endpoint=stub.endpoint, timeout=5.0))
            assert client.embed_text("hello") == "id-5"
            canvas = Canvas.constant(2, 4, 3, 0.5)
            vec = client.embed_image(canvas)
            assert vec.shape == (3,)
            assert np.allclose(vec, 0.5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BackendConfig(endpoint="")
        with pytest.raises(ConfigError):
            BackendConfig(endpoint="http://x", timeout=0)
        with pytest.raises(ConfigError):
            BackendConfig(endpoint="http://x", retries=-1)
        with pytest.raises(ConfigError):
            BackendConfig(endpoint="http://x", max_inflight=0)
