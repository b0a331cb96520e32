"""Protocol-conformance fixtures shared by client tests and live servers.

``run_conformance`` drives any server through a fixed set of checks via
a ``post(path, payload) -> (status, body)`` callable, so the same suite
validates the in-process fixture server and a real deployment.  The
codec round-trip fixtures exercise encode/decode without a server.
"""

from __future__ import annotations

import numpy as np

from ..errors import SaicError
from ..raster import mask_on
from . import protocol
from .types import BACKGROUND_STYLE, SELF_STYLE, GenerationRequest, parse_verdict


def fixture_image(h: int, w: int, phase: int = 0) -> np.ndarray:
    """Deterministic RGB test pattern (diagonal gradients, no RNG)."""
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    r = (3 * ys + 5 * xs + phase) % 256
    g = (7 * ys + 2 * xs + 11 * phase) % 256
    b = (ys * xs + phase) % 256
    return np.stack([r, g, b], axis=2).astype(np.uint8)


def fixture_mask(h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[h // 4 : max(h // 4 + 1, 3 * h // 4), w // 4 : max(w // 4 + 1, 3 * w // 4)] = 255
    return mask


def fixture_compose_request() -> GenerationRequest:
    background = fixture_image(32, 32)
    bbox = (8, 8, 12, 12)
    conditioning = background.copy()
    conditioning[8:20, 8:20] = fixture_image(12, 12, phase=97)
    return GenerationRequest(
        background=background,
        conditioning=conditioning,
        shape_mask=fixture_mask(12, 12),
        bbox=bbox,
        id_tokens=[np.linspace(0.0, 1.0, 8), np.linspace(1.0, 0.0, 8)],
        seed=1234,
        variant_tag=SELF_STYLE,
    )


def codec_roundtrip_payloads() -> list[tuple[str, dict]]:
    """Fixture payloads for encode(decode(x)) == x checks."""
    image = fixture_image(24, 24)
    mask = fixture_mask(8, 10)
    req = fixture_compose_request()
    return [
        ("segment-request", protocol.encode_segment_request(image, (3, 4, 10, 8))),
        ("segment-response", protocol.encode_segment_response(mask)),
        ("embed-request", protocol.encode_embed_request(image, fixture_mask(24, 24), 64)),
        ("embed-request-nomask", protocol.encode_embed_request(image, None, 64)),
        ("compose-request", protocol.encode_compose_request(req)),
        ("compose-response", protocol.encode_compose_response(image)),
        ("judge-request", protocol.encode_judge_request(image, fixture_image(24, 24, 5), "pick one")),
        ("judge-response", protocol.encode_judge_response("Choice: A\nReason: fixture")),
    ]


def roundtrip(name: str, payload: dict) -> dict:
    """Decode then re-encode one fixture payload."""
    if name == "segment-request":
        return protocol.encode_segment_request(*protocol.decode_segment_request(payload))
    if name == "segment-response":
        return protocol.encode_segment_response(protocol.decode_segment_response(payload))
    if name.startswith("embed-request"):
        return protocol.encode_embed_request(*protocol.decode_embed_request(payload))
    if name == "compose-request":
        return protocol.encode_compose_request(protocol.decode_compose_request(payload))
    if name == "compose-response":
        return protocol.encode_compose_response(protocol.decode_compose_response(payload))
    if name == "judge-request":
        return protocol.encode_judge_request(*protocol.decode_judge_request(payload))
    if name == "judge-response":
        return protocol.encode_judge_response(protocol.decode_judge_response(payload))
    raise ValueError(f"unknown fixture {name}")


JUDGE_FIXTURE_PROMPT = (
    "Two microscopy composites follow as image A and image B. Pick the one "
    "where the inserted cell blends more naturally with its surroundings. "
    "Answer with a line 'Choice: A' or 'Choice: B', then 'Reason: <why>'."
)


def run_conformance(post) -> list[str]:
    """Run every server-facing conformance check through ``post``.

    ``post(path, payload)`` must return ``(status_code, body_dict)``.
    Returns the names of the checks that passed; raises AssertionError
    with the offending check name otherwise.
    """
    passed = []

    # segment: mask decodes, matches the bbox, and is nonempty
    image = fixture_image(24, 24)
    status, body = post(protocol.SEGMENT_PATH, protocol.encode_segment_request(image, (3, 4, 10, 8)))
    assert status == 200, f"segment-roundtrip: HTTP {status}"
    seg_mask = protocol.decode_segment_response(body)
    assert seg_mask.ndim == 2 and seg_mask.shape == (8, 10), (
        f"segment-roundtrip: mask shape {seg_mask.shape}"
    )
    assert mask_on(seg_mask).any(), "segment-roundtrip: empty mask"
    passed.append("segment-roundtrip")

    # embed: requested dimension honored, unit norm, coherent tokens
    status, body = post(protocol.EMBED_PATH, protocol.encode_embed_request(image, None, 64))
    assert status == 200, f"embed-unit-norm: HTTP {status}"
    bundle = protocol.decode_embed_response(body, expect_dim=64)
    assert bundle.global_vec.shape == (64,), "embed-unit-norm: wrong dimension"
    passed.append("embed-unit-norm")

    # compose: output image matches the background's dimensions
    req = fixture_compose_request()
    for tag in (SELF_STYLE, BACKGROUND_STYLE):
        req.variant_tag = tag
        status, body = post(protocol.COMPOSE_PATH, protocol.encode_compose_request(req))
        assert status == 200, f"compose-dimensions[{tag}]: HTTP {status}"
        out = protocol.decode_compose_response(body)
        assert out.shape[:2] == req.background.shape[:2], (
            f"compose-dimensions[{tag}]: {out.shape[:2]}"
        )
    passed.append("compose-dimensions")

    # judge: text responses must carry a parseable Choice line
    img_a = fixture_image(24, 24)
    img_b = img_a.copy()
    img_b[6:18, 6:18] = fixture_image(12, 12, phase=41)
    status, body = post(
        protocol.JUDGE_PATH, protocol.encode_judge_request(img_a, img_b, JUDGE_FIXTURE_PROMPT)
    )
    assert status == 200, f"judge-verdict: HTTP {status}"
    verdict = parse_verdict(protocol.decode_judge_response(body))
    assert verdict.choice in ("A", "B"), "judge-verdict: bad choice"
    passed.append("judge-verdict")

    # error envelope: malformed payloads get a 400 with {"error": s}
    for path in (
        protocol.SEGMENT_PATH,
        protocol.EMBED_PATH,
        protocol.COMPOSE_PATH,
        protocol.JUDGE_PATH,
    ):
        status, body = post(path, {"nonsense": True})
        assert status == 400, f"error-envelope[{path}]: HTTP {status}"
        assert isinstance(body, dict) and isinstance(body.get("error"), str), (
            f"error-envelope[{path}]: body {body!r}"
        )
    status, body = post(
        protocol.SEGMENT_PATH, {"image": "deadbeef not png", "bbox": [0, 0, 4, 4]}
    )
    assert status == 400 and isinstance(body.get("error"), str), "error-envelope[bad-png]"
    passed.append("error-envelope")

    return passed


def post_via_backends(path: str, payload: dict, backends) -> tuple[int, dict]:
    """Serve one protocol request from in-process backends.

    This is the reference server core: the stdlib fixture server and any
    test harness route decoded payloads through it so wire behavior and
    reference behavior cannot drift apart.
    """
    try:
        if path == protocol.SEGMENT_PATH:
            image, bbox = protocol.decode_segment_request(payload)
            return 200, protocol.encode_segment_response(backends.segmentation.segment(image, bbox))
        if path == protocol.EMBED_PATH:
            image, emb_mask, dim = protocol.decode_embed_request(payload)
            embedder = type(backends.embedding)(dim=dim)
            return 200, protocol.encode_embed_response(embedder.embed(image, emb_mask))
        if path == protocol.COMPOSE_PATH:
            request = protocol.decode_compose_request(payload)
            request.metadata["candidate_crop"] = request.conditioning[
                request.bbox[1] : request.bbox[1] + request.bbox[3],
                request.bbox[0] : request.bbox[0] + request.bbox[2],
            ]
            return 200, protocol.encode_compose_response(backends.generation.generate(request))
        if path == protocol.JUDGE_PATH:
            image_a, image_b, prompt = protocol.decode_judge_request(payload)
            verdict = backends.judge.judge(image_a, image_b, prompt)
            return 200, protocol.encode_judge_response(verdict.raw)
        return 404, {"error": f"unknown path {path}"}
    except (SaicError, ValueError) as exc:
        return 400, {"error": str(exc)}
