"""HTTP client for live backend servers.

All four endpoints are idempotent (pure functions of the payload), so
requests are retried with exponential backoff on connection failures
and 5xx responses, up to the configured count.  A 2xx response is final
and never retried.  Non-2xx, non-5xx responses carry an
``{"error": s}`` envelope and are surfaced as typed errors without a
retry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import requests

from ..errors import (
    BackendUnavailableError,
    GenerationRejectedError,
    MalformedResponseError,
    RegionOutOfBoundsError,
)
from ..raster import BBox, Raster, mask_on
from . import protocol
from .types import EmbeddingBundle, GenerationRequest, VlmVerdict, parse_verdict


@dataclass
class ClientConfig:
    base_url: str
    timeout_s: float = 30.0
    retries: int = 2
    backoff_s: float = 0.5
    token: str | None = None
    embed_dim: int = 768


class HttpBackendClient:
    """Client for all four endpoints of one backend server.

    ``session`` only needs a requests-compatible ``post``; injecting a
    test client works for in-process conformance runs.
    """

    def __init__(self, config: ClientConfig, session=None):
        self.config = config
        self.session = session if session is not None else requests.Session()

    # -- transport ---------------------------------------------------------

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = {}
        if self.config.token:
            headers["Authorization"] = f"Bearer {self.config.token}"
        attempts = self.config.retries + 1
        last_failure = "no attempts made"
        for attempt in range(attempts):
            if attempt > 0:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_s
                )
            except requests.RequestException as exc:
                last_failure = f"connection failure: {exc}"
                continue
            if 200 <= resp.status_code < 300:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise MalformedResponseError(f"{path}: response is not JSON: {exc}") from exc
            if resp.status_code >= 500:
                last_failure = f"server error {resp.status_code}"
                continue
            # 4xx: protocol-level rejection, not retryable
            raise _client_rejection(path, resp)
        raise BackendUnavailableError(
            f"{path} unavailable after {attempts} attempts ({last_failure})"
        )

    # -- endpoints -----------------------------------------------------------

    def segment(self, image: Raster, bbox: BBox) -> Raster:
        x, y, w, h = bbox
        ih, iw = image.shape[:2]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise RegionOutOfBoundsError(f"bbox {bbox} outside image {iw}x{ih}")
        body = self._post(protocol.SEGMENT_PATH, protocol.encode_segment_request(image, bbox))
        mask = protocol.decode_segment_response(body)
        if mask.ndim != 2 or mask.shape != (h, w):
            raise MalformedResponseError(
                f"segment mask shape {mask.shape} != requested {(h, w)}"
            )
        if not mask_on(mask).any():
            raise MalformedResponseError("segment mask has no positive pixels")
        return mask

    def embed(self, image: Raster, mask: Raster | None = None) -> EmbeddingBundle:
        body = self._post(
            protocol.EMBED_PATH,
            protocol.encode_embed_request(image, mask, self.config.embed_dim),
        )
        return protocol.decode_embed_response(body, expect_dim=self.config.embed_dim)

    def generate(self, request: GenerationRequest) -> Raster:
        request.validate()
        body = self._post(protocol.COMPOSE_PATH, protocol.encode_compose_request(request))
        image = protocol.decode_compose_response(body)
        if image.shape[:2] != request.background.shape[:2]:
            raise MalformedResponseError(
                f"composed image {image.shape[:2]} != background {request.background.shape[:2]}"
            )
        return image

    def judge(self, image_a: Raster, image_b: Raster, prompt: str) -> VlmVerdict:
        if image_a.shape[:2] != image_b.shape[:2]:
            raise MalformedResponseError("judge images must share dimensions")
        body = self._post(
            protocol.JUDGE_PATH, protocol.encode_judge_request(image_a, image_b, prompt)
        )
        return parse_verdict(protocol.decode_judge_response(body))


def _client_rejection(path: str, resp) -> Exception:
    try:
        message = resp.json().get("error", resp.text)
    except ValueError:
        message = resp.text
    if path == protocol.COMPOSE_PATH:
        return GenerationRejectedError(f"{path}: {message}")
    return MalformedResponseError(f"{path}: HTTP {resp.status_code}: {message}")
