"""Raster conventions and I/O.

Rasters are plain numpy arrays throughout the pipeline:

* RGB image: uint8, shape (h, w, 3), C-order (row-major, channel-interleaved)
* mask:      uint8, shape (h, w); a pixel is "on" when its value > 127
* HF map:    float64, shape (h, w) or (h, w, 3); values may be negative

Bounding boxes are (x, y, w, h) integer tuples with x along columns.

PNG is the interchange format for all 8-bit rasters.  High-frequency maps
are persisted as raw float32 with a fixed little-endian header so they can
be inspected and diffed without a Python round-trip.
"""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionMismatchError, EmptyImageError, ParseError

# Raster/HFMap are numpy arrays; the aliases exist for signature readability.
Raster = np.ndarray
HFMap = np.ndarray
BBox = tuple[int, int, int, int]

HF_MAGIC = b"SAICHF1\x00"

MASK_ON_THRESHOLD = 127  # pixel counts as mask-on when value > this


def require_image(arr: np.ndarray) -> None:
    if arr.size == 0:
        raise EmptyImageError("image has no pixels")
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (1, 3)):
        raise DimensionMismatchError(f"unsupported raster shape {arr.shape}")


def channels(arr: np.ndarray) -> int:
    return 1 if arr.ndim == 2 else arr.shape[2]


def mask_on(mask: np.ndarray) -> np.ndarray:
    """Boolean array of mask pixels counted as selected."""
    return mask > MASK_ON_THRESHOLD


def load_png(path) -> Raster:
    with Image.open(path) as img:
        if img.mode == "L":
            return np.asarray(img, dtype=np.uint8)
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_png(arr: Raster, path) -> None:
    _to_pil(arr).save(path, format="PNG")


def encode_png(arr: Raster) -> bytes:
    buf = io.BytesIO()
    _to_pil(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> Raster:
    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode == "L":
                return np.asarray(img, dtype=np.uint8)
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ParseError(f"not a decodable image: {exc}") from exc


def _to_pil(arr: np.ndarray) -> Image.Image:
    require_image(arr)
    arr = np.ascontiguousarray(arr.astype(np.uint8, copy=False))
    if arr.ndim == 2:
        return Image.fromarray(arr, mode="L")
    if arr.shape[2] == 1:
        return Image.fromarray(arr[:, :, 0], mode="L")
    return Image.fromarray(arr, mode="RGB")


# --- high-frequency map binary format ------------------------------------
#
# Header: magic "SAICHF1\0" (8 bytes) then width, height, channels as
# little-endian int32 (12 bytes), followed by float32 samples in C-order.

def save_hf(hf: HFMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_hf(hf))


def load_hf(path) -> HFMap:
    with open(path, "rb") as fh:
        return decode_hf(fh.read())


def encode_hf(hf: HFMap) -> bytes:
    require_image(hf)
    h, w = hf.shape[:2]
    c = channels(hf)
    header = HF_MAGIC + struct.pack("<iii", w, h, c)
    body = np.ascontiguousarray(hf, dtype=np.float32).tobytes()
    return header + body


def decode_hf(data: bytes) -> HFMap:
    if len(data) < 20 or data[:8] != HF_MAGIC:
        raise ParseError("not a SAICHF1 payload")
    w, h, c = struct.unpack("<iii", data[8:20])
    expected = w * h * c * 4
    if w < 1 or h < 1 or c < 1 or len(data) - 20 != expected:
        raise ParseError(
            f"HF payload size {len(data) - 20} != {expected} for {w}x{h}x{c}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=20)
    arr = flat.reshape((h, w) if c == 1 else (h, w, c))
    return arr.astype(np.float64)


# --- resampling ----------------------------------------------------------
#
# Crops and HF maps resample bilinearly; masks use nearest-neighbor so they
# stay binary.

def resize_image(arr: Raster, size: tuple[int, int]) -> Raster:
    """Bilinear resize of an 8-bit raster to (w, h)."""
    w, h = size
    img = _to_pil(arr).resize((w, h), Image.BILINEAR)
    out = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 3 and out.ndim == 2:
        out = out[:, :, None].repeat(arr.shape[2], axis=2)
    return out


def resize_mask(mask: Raster, size: tuple[int, int]) -> Raster:
    """Nearest-neighbor resize of a mask to (w, h)."""
    w, h = size
    img = Image.fromarray(mask.astype(np.uint8, copy=False), mode="L")
    return np.asarray(img.resize((w, h), Image.NEAREST), dtype=np.uint8)


def resize_hf(hf: HFMap, size: tuple[int, int]) -> HFMap:
    """Bilinear resize of a float map to (w, h), channel by channel."""
    w, h = size
    hf = np.asarray(hf, dtype=np.float64)
    if hf.ndim == 2:
        planes = [hf]
    else:
        planes = [hf[:, :, i] for i in range(hf.shape[2])]
    resized = []
    for plane in planes:
        img = Image.fromarray(plane.astype(np.float32), mode="F")
        resized.append(np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64))
    if hf.ndim == 2:
        return resized[0]
    return np.stack(resized, axis=2)


# --- box filter ----------------------------------------------------------

def box_filter(arr: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter with a (2r+1)^2 window and zero padding outside the array.

    The divisor is the full window area everywhere, so values fade toward
    the array border; this keeps the filter exactly linear and cheap to
    hand-evaluate.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    arr = np.asarray(arr, dtype=np.float64)
    if radius == 0:
        return arr.copy()
    if arr.ndim == 3:
        return np.stack(
            [box_filter(arr[:, :, i], radius) for i in range(arr.shape[2])], axis=2
        )
    k = 2 * radius + 1
    padded = np.pad(arr, radius, mode="constant")
    # integral image with a leading zero row/column
    integ = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    integ[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = arr.shape
    sums = (
        integ[k : k + h, k : k + w]
        - integ[0:h, k : k + w]
        - integ[k : k + h, 0:w]
        + integ[0:h, 0:w]
    )
    return sums / (k * k)
