import numpy as np
import pytest
from fastapi.testclient import TestClient

from saic_server import ServerConfig, create_app
from saic_server.wire import decode_png_b64, encode_png_b64


def pattern_image(h: int, w: int, phase: int = 0) -> np.ndarray:
    """Deterministic RGB gradient pattern; no RNG involved."""
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    r = (3 * ys + 5 * xs + phase) % 256
    g = (7 * ys + 2 * xs + 11 * phase) % 256
    b = (ys * xs + phase) % 256
    return np.stack([r, g, b], axis=2).astype(np.uint8)


def block_mask(h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[h // 4 : 3 * h // 4, w // 4 : 3 * w // 4] = 255
    return mask


def b64(image: np.ndarray) -> str:
    return encode_png_b64(image)


def from_b64(value: str) -> np.ndarray:
    return decode_png_b64(value)


def compose_payload(h: int = 32, w: int = 32, bbox=(8, 8, 12, 12), variant="self_style", seed=7):
    background = pattern_image(h, w)
    conditioning = background.copy()
    x, y, bw, bh = bbox
    conditioning[y : y + bh, x : x + bw] = pattern_image(bh, bw, phase=50)
    return {
        "background": b64(background),
        "conditioning": b64(conditioning),
        "shape_mask": b64(block_mask(bh, bw)),
        "bbox": list(bbox),
        "id_tokens": [[0.1] * 8, [0.9] * 8],
        "seed": seed,
        "variant": variant,
    }, background


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app(ServerConfig())) as c:
        yield c
