import base64
import json
import threading
from collections import deque
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from attribkit.attribution import Prompt, PromptOrigin
from attribkit.errors import (
    CountMismatch,
    NonFiniteVector,
    ProtocolError,
    RemoteError,
    TransportError,
)
from attribkit.imagecore import encode_png
from attribkit.modelgateway import (
    CachingBackend,
    GatewayClient,
    GatewayConfig,
    PoolCache,
    RemoteCaptionSource,
    b64_to_image,
    image_to_b64,
    prompt_hash,
)

from conftest import constant_image, random_image

PROMPT = Prompt("a foggy castle on a hillside with iron railings", PromptOrigin.NATURAL)


@contextmanager
def stub_server(script):
    """Serve scripted (status, payload) responses and log request bodies."""
    log = []
    queue = deque(script)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            log.append((self.path, self.rfile.read(length)))
            status, payload = queue.popleft() if queue else (500, {"error": "exhausted"})
            body = json.dumps(payload).encode() if isinstance(payload, dict) else payload
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", log
    finally:
        server.shutdown()
        thread.join(timeout=2)


def b64png(value=7, size=4):
    return base64.b64encode(encode_png(constant_image(value, size, size))).decode()


def client_for(url, retries=2):
    return GatewayClient(GatewayConfig(base_url=url, timeout_ms=2000, retries=retries))


class TestGenerateEndpoint:
    def test_two_images_decoded(self):
        with stub_server([(200, {"images": [b64png(1), b64png(2)]})]) as (url, log):
            images = client_for(url).generate("m1", PROMPT, 2, 7)
        assert len(images) == 2
        assert np.all(images[0].pixels == 1)
        assert np.all(images[1].pixels == 2)
        sent = json.loads(log[0][1])
        assert sent == {"model_id": "m1", "prompt": PROMPT.text, "n": 2, "seed": 7}

    def test_retry_after_two_500s(self):
        script = [
            (500, {"error": "boom", "message": "x"}),
            (500, {"error": "boom", "message": "x"}),
            (200, {"images": [b64png()]}),
        ]
        with stub_server(script) as (url, log):
            images = client_for(url, retries=2).generate("m1", PROMPT, 1, 0)
        assert len(images) == 1
        assert len(log) == 3
        # idempotent retries: payload byte-identical every attempt
        assert log[0][1] == log[1][1] == log[2][1]

    def test_500_exhausts_retries(self):
        script = [(500, {"error": "boom"})] * 3
        with stub_server(script) as (url, _):
            with pytest.raises(RemoteError):
                client_for(url, retries=2).generate("m1", PROMPT, 1, 0)

    def test_4xx_fails_immediately(self):
        with stub_server([(404, {"error": "unknown_model", "message": "m9"})]) as (url, log):
            with pytest.raises(RemoteError) as err:
                client_for(url).generate("m9", PROMPT, 1, 0)
        assert err.value.code == "unknown_model"
        assert len(log) == 1

    def test_missing_images_field(self):
        with stub_server([(200, {"data": []})]) as (url, _):
            with pytest.raises(ProtocolError):
                client_for(url).generate("m1", PROMPT, 1, 0)

    def test_count_mismatch(self):
        with stub_server([(200, {"images": [b64png()]})]) as (url, _):
            with pytest.raises(CountMismatch):
                client_for(url).generate("m1", PROMPT, 3, 0)

    def test_undecodable_image(self):
        bad = base64.b64encode(b"not a png").decode()
        with stub_server([(200, {"images": [bad]})]) as (url, _):
            with pytest.raises(ProtocolError):
                client_for(url).generate("m1", PROMPT, 1, 0)

    def test_connection_refused_transport_error(self):
        client = GatewayClient(GatewayConfig("http://127.0.0.1:9", timeout_ms=300, retries=0))
        with pytest.raises(TransportError):
            client.generate("m1", PROMPT, 1, 0)


class TestCaptionEndpoint:
    def test_prompt_tagged_generated(self, rng):
        with stub_server([(200, {"prompt": "a city street"})]) as (url, _):
            got = client_for(url).caption(random_image(rng, 4, 4))
        assert got.text == "a city street"
        assert got.source == PromptOrigin.GENERATED

    def test_empty_prompt_protocol_error(self, rng):
        with stub_server([(200, {"prompt": ""})]) as (url, _):
            with pytest.raises(ProtocolError):
                client_for(url).caption(random_image(rng, 4, 4))

    def test_caption_source_wraps_failures(self, rng):
        from attribkit.errors import PromptUnavailable

        with stub_server([(503, {"error": "down"})]) as (url, _):
            source = RemoteCaptionSource(client_for(url, retries=0))
            with pytest.raises(PromptUnavailable):
                source.invert(random_image(rng, 4, 4))


class TestEmbedEndpoint:
    def test_unit_vector(self, rng):
        vec = [0.5, 0.5, 0.5, 0.5, 0, 0, 0, 0]
        with stub_server([(200, {"vector": vec, "dim": 8})]) as (url, _):
            got = client_for(url).embed(random_image(rng, 4, 4))
        assert got.dimension == 8
        assert got.extractor_id == "embed"

    def test_dim_mismatch(self, rng):
        with stub_server([(200, {"vector": [1.0, 2.0], "dim": 3})]) as (url, _):
            with pytest.raises(ProtocolError):
                client_for(url).embed(random_image(rng, 4, 4))

    def test_nan_rejected(self, rng):
        with stub_server([(200, {"vector": [1.0, float("nan")], "dim": 2})]) as (url, _):
            with pytest.raises(NonFiniteVector):
                client_for(url).embed(random_image(rng, 4, 4))


class TestB64Helpers:
    def test_roundtrip(self, rng):
        img = random_image(rng, 5, 9)
        assert np.array_equal(b64_to_image(image_to_b64(img)).pixels, img.pixels)

    def test_invalid_b64(self):
        with pytest.raises(ProtocolError):
            b64_to_image("%%%not-base64%%%")


class TestModuleLevelWrappers:
    def test_remote_functions(self, rng):
        from attribkit.modelgateway import remote_caption, remote_embed, remote_generate

        script = [
            (200, {"images": [b64png(4)]}),
            (200, {"prompt": "a lighthouse"}),
            (200, {"vector": [1.0, 0.0], "dim": 2}),
        ]
        with stub_server(script) as (url, _):
            cfg = GatewayConfig(base_url=url, timeout_ms=2000, retries=0)
            assert len(remote_generate(cfg, "m1", PROMPT, 1, 0)) == 1
            assert remote_caption(cfg, random_image(rng, 4, 4)).text == "a lighthouse"
            assert remote_embed(cfg, random_image(rng, 4, 4)).dimension == 2


class CountingProducer:
    def __init__(self, rng):
        self.calls = 0
        self.rng = rng

    def __call__(self, gamma):
        self.calls += 1
        return [random_image(self.rng, 8, 8) for _ in range(gamma)]


class TestPoolCache:
    def test_roundtrip_and_hit(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)
        first = cache.get_or_generate(PROMPT, "m1", 3, 7, producer)
        second = cache.get_or_generate(PROMPT, "m1", 3, 7, producer)
        assert producer.calls == 1
        for a, b in zip(first, second):
            assert np.array_equal(a.pixels, b.pixels)

    def test_prefix_reuse_zero_calls(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)
        big = cache.get_or_generate(PROMPT, "m1", 50, 7, producer)
        assert producer.calls == 1
        small = cache.get_or_generate(PROMPT, "m1", 10, 7, producer)
        assert producer.calls == 1
        for a, b in zip(big[:10], small):
            assert np.array_equal(a.pixels, b.pixels)

    def test_seed_change_regenerates(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)
        cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        cache.get_or_generate(PROMPT, "m1", 2, 8, producer)
        assert producer.calls == 2

    def test_corrupt_manifest_self_heals(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)
        cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        entry = tmp_path / "pools" / prompt_hash(PROMPT.text) / "m1"
        (entry / "manifest.json").write_text("{ not json", encoding="utf-8")
        again = cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        assert producer.calls == 2
        assert len(again) == 2
        # entry was replaced with a readable one
        json.loads((entry / "manifest.json").read_text())

    def test_missing_image_file_treated_as_miss(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)
        cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        entry = tmp_path / "pools" / prompt_hash(PROMPT.text) / "m1"
        (entry / "001.png").unlink()
        cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        assert producer.calls == 2

    def test_fault_injection_leaves_no_entry(self, rng, tmp_path):
        cache = PoolCache(tmp_path)
        producer = CountingProducer(rng)

        def crash():
            raise RuntimeError("injected crash")

        cache._pre_publish_hook = crash
        with pytest.raises(RuntimeError):
            cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        entry = tmp_path / "pools" / prompt_hash(PROMPT.text) / "m1"
        assert not entry.exists()
        leftovers = [p for p in entry.parent.glob(".tmp-*")] if entry.parent.exists() else []
        assert leftovers == []
        cache._pre_publish_hook = None
        images = cache.get_or_generate(PROMPT, "m1", 2, 7, producer)
        assert len(images) == 2
        assert producer.calls == 2

    def test_concurrent_identical_requests_generate_once(self, tmp_path):
        cache = PoolCache(tmp_path)
        calls = []
        gate = threading.Event()

        def producer(gamma):
            calls.append(1)
            gate.wait(0.2)
            return [constant_image(3, 8, 8) for _ in range(gamma)]

        results = []

        def work():
            results.append(cache.get_or_generate(PROMPT, "m1", 2, 7, producer))

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        gate.set()
        for t in threads:
            t.join(timeout=10)
        assert len(calls) == 1
        assert len(results) == 4

    def test_caching_backend_wrapper(self, rng, tmp_path):
        calls = []

        class Inner:
            def generate(self, model_id, prompt, n, seed):
                calls.append(n)
                return [random_image(rng, 8, 8) for _ in range(n)]

        backend = CachingBackend(Inner(), PoolCache(tmp_path))
        a = backend.generate("m1", PROMPT, 3, 5)
        b = backend.generate("m1", PROMPT, 3, 5)
        assert calls == [3]
        for ia, ib in zip(a, b):
            assert np.array_equal(ia.pixels, ib.pixels)
