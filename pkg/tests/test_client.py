import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
import requests

from saic.backends import protocol
from saic.backends.client import ClientConfig, HttpBackendClient
from saic.backends.conformance import post_via_backends, run_conformance
from saic.backends.reference import reference_backends
from saic.backends.types import GenerationRequest
from saic.errors import (
    BackendUnavailableError,
    GenerationRejectedError,
    MalformedResponseError,
    RegionOutOfBoundsError,
    UnparseableVerdictError,
)


class FakeResponse:
    def __init__(self, status_code, body=None, text=""):
        self.status_code = status_code
        self._body = body
        self.text = text if body is None else json.dumps(body)

    def json(self):
        if self._body is None:
            raise ValueError("not json")
        return self._body


class FakeSession:
    """Requests-compatible stub replaying a script of responses."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def _client(script, **overrides):
    config = ClientConfig(base_url="http://test", backoff_s=0.0, embed_dim=4, **overrides)
    session = FakeSession(script)
    return HttpBackendClient(config, session=session), session


def _image(seed=0, h=16, w=16):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def _mask_body(h=4, w=4):
    mask = np.full((h, w), 255, dtype=np.uint8)
    return protocol.encode_segment_response(mask)


class TestRetries:
    def test_5xx_retried_then_success(self):
        script = [
            FakeResponse(500, {"error": "flaky"}),
            FakeResponse(503, {"error": "flaky"}),
            FakeResponse(200, _mask_body()),
        ]
        client, session = _client(script)
        mask = client.segment(_image(), (0, 0, 4, 4))
        assert mask.shape == (4, 4)
        assert len(session.calls) == 3

    def test_success_is_never_retried(self):
        client, session = _client([FakeResponse(200, _mask_body())])
        client.segment(_image(), (0, 0, 4, 4))
        assert len(session.calls) == 1

    def test_retries_exhausted(self):
        script = [FakeResponse(500, {"error": "down"})] * 3
        client, session = _client(script)
        with pytest.raises(BackendUnavailableError, match="3 attempts"):
            client.segment(_image(), (0, 0, 4, 4))
        assert len(session.calls) == 3

    def test_connection_failures_retried(self):
        script = [
            requests.ConnectionError("refused"),
            FakeResponse(200, _mask_body()),
        ]
        client, session = _client(script)
        client.segment(_image(), (0, 0, 4, 4))
        assert len(session.calls) == 2

    def test_connection_failures_exhausted(self):
        script = [requests.ConnectionError("refused")] * 3
        client, _ = _client(script)
        with pytest.raises(BackendUnavailableError, match="connection failure"):
            client.segment(_image(), (0, 0, 4, 4))

    def test_4xx_not_retried(self):
        client, session = _client([FakeResponse(422, {"error": "bad bbox"})])
        with pytest.raises(MalformedResponseError, match="bad bbox"):
            client.segment(_image(), (0, 0, 4, 4))
        assert len(session.calls) == 1


class TestResponseValidation:
    def test_non_json_success_body(self):
        client, _ = _client([FakeResponse(200, body=None, text="<html>oops</html>")])
        with pytest.raises(MalformedResponseError, match="not JSON"):
            client.segment(_image(), (0, 0, 4, 4))

    def test_segment_wrong_shape(self):
        client, _ = _client([FakeResponse(200, _mask_body(3, 3))])
        with pytest.raises(MalformedResponseError, match="shape"):
            client.segment(_image(), (0, 0, 4, 4))

    def test_segment_empty_mask(self):
        empty = protocol.encode_segment_response(np.zeros((4, 4), dtype=np.uint8))
        client, _ = _client([FakeResponse(200, empty)])
        with pytest.raises(MalformedResponseError, match="no positive"):
            client.segment(_image(), (0, 0, 4, 4))

    def test_embed_non_unit_norm(self):
        client, _ = _client([FakeResponse(200, {"global": [1.0, 1.0, 0.0, 0.0], "tokens": []})])
        with pytest.raises(MalformedResponseError, match="norm"):
            client.embed(_image())

    def test_embed_wrong_dim(self):
        client, _ = _client([FakeResponse(200, {"global": [1.0, 0.0], "tokens": []})])
        with pytest.raises(MalformedResponseError, match="length 2"):
            client.embed(_image())

    def test_judge_unparseable_text(self):
        client, _ = _client([FakeResponse(200, {"text": "I refuse to answer."})])
        with pytest.raises(UnparseableVerdictError):
            client.judge(_image(0), _image(1), "pick")


class TestClientSideChecks:
    def test_segment_bbox_checked_before_network(self):
        client, session = _client([])
        with pytest.raises(RegionOutOfBoundsError):
            client.segment(_image(0, 8, 8), (5, 5, 8, 8))
        assert session.calls == []

    def test_judge_shape_checked_before_network(self):
        client, session = _client([])
        with pytest.raises(MalformedResponseError):
            client.judge(_image(0, 8, 8), _image(0, 9, 9), "pick")
        assert session.calls == []

    def test_generate_validates_request_before_network(self):
        client, session = _client([])
        bad = GenerationRequest(
            background=_image(0, 8, 8),
            conditioning=_image(1, 8, 8),
            shape_mask=np.full((4, 4), 255, dtype=np.uint8),
            bbox=(6, 6, 4, 4),  # spills past the 8x8 background
            id_tokens=[np.ones(4) / 2.0],
            seed=1,
            variant_tag="self_style",
        )
        with pytest.raises(Exception):
            client.generate(bad)
        assert session.calls == []


class TestGenerationErrors:
    def _request(self):
        bg = _image(0, 16, 16)
        return GenerationRequest(
            background=bg,
            conditioning=bg.copy(),
            shape_mask=np.full((4, 4), 255, dtype=np.uint8),
            bbox=(2, 2, 4, 4),
            id_tokens=[np.ones(4) / 2.0],
            seed=1,
            variant_tag="self_style",
        )

    def test_rejection_carries_server_message(self):
        client, _ = _client([FakeResponse(400, {"error": "nsfw filter tripped"})])
        with pytest.raises(GenerationRejectedError, match="nsfw filter tripped"):
            client.generate(self._request())

    def test_wrong_output_shape(self):
        tiny = protocol.encode_compose_response(_image(1, 8, 8))
        client, _ = _client([FakeResponse(200, tiny)])
        with pytest.raises(MalformedResponseError, match="background"):
            client.generate(self._request())


class TestHeaders:
    def test_bearer_token_attached(self):
        client, session = _client([FakeResponse(200, _mask_body())], token="sekrit")
        client.segment(_image(), (0, 0, 4, 4))
        assert session.calls[0]["headers"]["Authorization"] == "Bearer sekrit"

    def test_no_token_no_header(self):
        client, session = _client([FakeResponse(200, _mask_body())])
        client.segment(_image(), (0, 0, 4, 4))
        assert "Authorization" not in session.calls[0]["headers"]

    def test_paths_joined_without_double_slash(self):
        client, session = _client([FakeResponse(200, _mask_body())], )
        client.config.base_url = "http://test/"
        client.segment(_image(), (0, 0, 4, 4))
        assert session.calls[0]["url"] == "http://test/v1/segment"


@pytest.fixture(scope="module")
def live_server():
    backends = reference_backends(embed_dim=32)
    token = "fixture-token"

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.headers.get("Authorization") != f"Bearer {token}":
                self._reply(401, {"error": "missing or invalid bearer token"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
            except (ValueError, UnicodeDecodeError):
                self._reply(400, {"error": "request body is not valid JSON"})
                return
            status, body = post_via_backends(self.path, payload, backends)
            self._reply(status, body)

        def _reply(self, status, body):
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", token
    server.shutdown()
    thread.join(timeout=5)


class TestOverSockets:
    def test_segment_and_embed_roundtrip(self, live_server):
        url, token = live_server
        client = HttpBackendClient(ClientConfig(base_url=url, token=token, embed_dim=32))
        img = _image(11, 24, 24)
        mask = client.segment(img, (2, 2, 10, 8))
        assert mask.shape == (8, 10)
        bundle = client.embed(img, None)
        assert bundle.global_vec.shape == (32,)

    def test_missing_token_is_rejected(self, live_server):
        url, _ = live_server
        client = HttpBackendClient(
            ClientConfig(base_url=url, embed_dim=32, retries=0, backoff_s=0.0)
        )
        with pytest.raises(MalformedResponseError, match="401"):
            client.segment(_image(12, 24, 24), (0, 0, 4, 4))

    def test_conformance_suite_over_http(self, live_server):
        url, token = live_server
        headers = {"Authorization": f"Bearer {token}"}

        def post(path, payload):
            resp = requests.post(url + path, json=payload, headers=headers, timeout=10)
            return resp.status_code, resp.json()

        passed = run_conformance(post)
        assert len(passed) == 5

    def test_refused_connection(self):
        client = HttpBackendClient(
            ClientConfig(
                base_url="http://127.0.0.1:9", retries=1, backoff_s=0.0, timeout_s=0.5
            )
        )
        with pytest.raises(BackendUnavailableError):
            client.segment(_image(13, 8, 8), (0, 0, 4, 4))
