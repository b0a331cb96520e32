"""Wire codecs for the /v1/* JSON protocol.

Images travel as base64-encoded PNG strings.  Malformed values raise
``WireError``, which the app maps to a 400 ``{"error": ...}`` envelope.
"""

from __future__ import annotations

import base64
import binascii
import io

import numpy as np
from PIL import Image, UnidentifiedImageError


class WireError(ValueError):
    pass


def decode_png_b64(value: str, field: str = "image") -> np.ndarray:
    if not isinstance(value, str):
        raise WireError(f"{field}: expected a base64 string")
    try:
        raw = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise WireError(f"{field}: invalid base64: {exc}") from exc
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img.load()
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            array = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise WireError(f"{field}: not a decodable PNG: {exc}") from exc
    return array


def encode_png_b64(image: np.ndarray) -> str:
    if image.dtype != np.uint8 or image.ndim not in (2, 3):
        raise WireError(f"cannot encode array dtype={image.dtype} ndim={image.ndim}")
    mode = "L" if image.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(image, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def require_bbox(bbox, image: np.ndarray, field: str = "bbox") -> tuple[int, int, int, int]:
    if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
        raise WireError(f"{field}: expected [x, y, w, h]")
    try:
        x, y, w, h = (int(v) for v in bbox)
    except (TypeError, ValueError) as exc:
        raise WireError(f"{field}: non-integer entries") from exc
    ih, iw = image.shape[:2]
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > iw or y + h > ih:
        raise WireError(f"{field}: {bbox} outside image {iw}x{ih}")
    return x, y, w, h
