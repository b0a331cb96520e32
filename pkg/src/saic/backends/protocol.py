"""Wire codec for the v1 backend protocol.

One HTTP protocol, four endpoints, JSON bodies with base64-encoded PNG
rasters:

    POST /v1/segment  {"image": b64png, "bbox": [x,y,w,h]}
                      -> {"mask": b64png}
    POST /v1/embed    {"image": b64png, "mask": b64png|null, "dim": D}
                      -> {"global": [f...], "tokens": [[f...], ...]|null}
    POST /v1/compose  {"background": b64png, "conditioning": b64png,
                       "shape_mask": b64png, "bbox": [x,y,w,h],
                       "id_tokens": [[f...]...], "seed": n,
                       "variant": "self_style"|"background_style"}
                      -> {"image": b64png}
    POST /v1/judge    {"image_a": b64png, "image_b": b64png, "prompt": s}
                      -> {"text": s}

Errors are non-2xx responses with a body of {"error": s}.  Decoding
failures on either side raise MalformedResponseError.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np

from .. import raster
from ..errors import MalformedResponseError
from ..raster import BBox, Raster
from .types import VARIANT_TAGS, EmbeddingBundle, GenerationRequest

SEGMENT_PATH = "/v1/segment"
EMBED_PATH = "/v1/embed"
COMPOSE_PATH = "/v1/compose"
JUDGE_PATH = "/v1/judge"


def encode_png_b64(arr: Raster) -> str:
    return base64.b64encode(raster.encode_png(arr)).decode("ascii")


def decode_png_b64(data: str) -> Raster:
    if not isinstance(data, str):
        raise MalformedResponseError(f"expected base64 string, got {type(data).__name__}")
    try:
        return raster.decode_png(base64.b64decode(data, validate=True))
    except (binascii.Error, OSError, ValueError) as exc:
        raise MalformedResponseError(f"undecodable PNG payload: {exc}") from exc


def _require(obj: dict, key: str):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedResponseError(f"payload missing field {key!r}")
    return obj[key]


def _decode_bbox(value) -> BBox:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise MalformedResponseError(f"bbox must be four integers, got {value!r}")
    return tuple(value)


# --- segment ---------------------------------------------------------------

def encode_segment_request(image: Raster, bbox: BBox) -> dict:
    return {"image": encode_png_b64(image), "bbox": list(bbox)}


def decode_segment_request(obj: dict) -> tuple[Raster, BBox]:
    return decode_png_b64(_require(obj, "image")), _decode_bbox(_require(obj, "bbox"))


def encode_segment_response(mask: Raster) -> dict:
    return {"mask": encode_png_b64(mask)}


def decode_segment_response(obj: dict) -> Raster:
    return decode_png_b64(_require(obj, "mask"))


# --- embed -------------------------------------------------------------------

def encode_embed_request(image: Raster, mask: Raster | None, dim: int) -> dict:
    return {
        "image": encode_png_b64(image),
        "mask": None if mask is None else encode_png_b64(mask),
        "dim": int(dim),
    }


def decode_embed_request(obj: dict) -> tuple[Raster, Raster | None, int]:
    image = decode_png_b64(_require(obj, "image"))
    raw_mask = _require(obj, "mask")
    mask = None if raw_mask is None else decode_png_b64(raw_mask)
    dim = _require(obj, "dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim <= 0:
        raise MalformedResponseError(f"dim must be a positive integer, got {dim!r}")
    return image, mask, dim


def encode_embed_response(bundle: EmbeddingBundle) -> dict:
    return {
        "global": [float(x) for x in bundle.global_vec],
        "tokens": None
        if bundle.tokens is None
        else [[float(x) for x in tok] for tok in bundle.tokens],
    }


def decode_embed_response(obj: dict, expect_dim: int | None = None) -> EmbeddingBundle:
    """Decode and contract-check an embedding response.

    The global vector must have the requested length (when known) and
    unit L2 norm within 1e-6; token vectors must share one length.
    """
    raw = _require(obj, "global")
    if not isinstance(raw, list) or not raw:
        raise MalformedResponseError("'global' must be a nonempty list of numbers")
    try:
        vec = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"'global' not numeric: {exc}") from exc
    if vec.ndim != 1:
        raise MalformedResponseError("'global' must be a flat vector")
    if expect_dim is not None and vec.shape[0] != expect_dim:
        raise MalformedResponseError(
            f"global embedding has length {vec.shape[0]}, requested {expect_dim}"
        )
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-6:
        raise MalformedResponseError(f"global embedding norm {norm} is not 1")

    raw_tokens = obj.get("tokens")
    tokens = None
    if raw_tokens is not None:
        if not isinstance(raw_tokens, list):
            raise MalformedResponseError("'tokens' must be null or a list")
        try:
            tokens = [np.asarray(t, dtype=np.float64) for t in raw_tokens]
        except (TypeError, ValueError) as exc:
            raise MalformedResponseError(f"'tokens' not numeric: {exc}") from exc
        lengths = {t.shape for t in tokens}
        if any(t.ndim != 1 for t in tokens) or len(lengths) > 1:
            raise MalformedResponseError("token vectors must share one length")
    return EmbeddingBundle(global_vec=vec, tokens=tokens)


# --- compose -----------------------------------------------------------------

def encode_compose_request(request: GenerationRequest) -> dict:
    return {
        "background": encode_png_b64(request.background),
        "conditioning": encode_png_b64(request.conditioning),
        "shape_mask": encode_png_b64(request.shape_mask),
        "bbox": list(request.bbox),
        "id_tokens": [[float(x) for x in tok] for tok in request.id_tokens],
        "seed": int(request.seed),
        "variant": request.variant_tag,
    }


def decode_compose_request(obj: dict) -> GenerationRequest:
    variant = _require(obj, "variant")
    if variant not in VARIANT_TAGS:
        raise MalformedResponseError(f"unknown variant {variant!r}")
    seed = _require(obj, "seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise MalformedResponseError(f"seed must be an integer, got {seed!r}")
    raw_tokens = _require(obj, "id_tokens")
    if not isinstance(raw_tokens, list):
        raise MalformedResponseError("'id_tokens' must be a list of vectors")
    try:
        tokens = [np.asarray(t, dtype=np.float64) for t in raw_tokens]
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"'id_tokens' not numeric: {exc}") from exc
    return GenerationRequest(
        background=decode_png_b64(_require(obj, "background")),
        conditioning=decode_png_b64(_require(obj, "conditioning")),
        shape_mask=decode_png_b64(_require(obj, "shape_mask")),
        bbox=_decode_bbox(_require(obj, "bbox")),
        id_tokens=tokens,
        seed=seed,
        variant_tag=variant,
    )


def encode_compose_response(image: Raster) -> dict:
    return {"image": encode_png_b64(image)}


def decode_compose_response(obj: dict) -> Raster:
    return decode_png_b64(_require(obj, "image"))


# --- judge -------------------------------------------------------------------

def encode_judge_request(image_a: Raster, image_b: Raster, prompt: str) -> dict:
    return {
        "image_a": encode_png_b64(image_a),
        "image_b": encode_png_b64(image_b),
        "prompt": str(prompt),
    }


def decode_judge_request(obj: dict) -> tuple[Raster, Raster, str]:
    prompt = _require(obj, "prompt")
    if not isinstance(prompt, str):
        raise MalformedResponseError("prompt must be a string")
    return (
        decode_png_b64(_require(obj, "image_a")),
        decode_png_b64(_require(obj, "image_b")),
        prompt,
    )


def encode_judge_response(text: str) -> dict:
    return {"text": str(text)}


def decode_judge_response(obj: dict) -> str:
    text = _require(obj, "text")
    if not isinstance(text, str):
        raise MalformedResponseError("'text' must be a string")
    return text
