"""Deterministic raster mathematics for style-aligned composition.

This module owns the pixel-level pieces of the pipeline: high-pass
filtering of cell crops, the high-frequency blend between a candidate
cell and a style reference, stitching of blended detail into a
background conditioning image, centering of masked crops, feathered
alpha compositing, and color-histogram style descriptors.

All operations are pure functions on numpy arrays (see ``raster`` for
conventions) and are safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import raster
from .errors import (
    DimensionMismatchError,
    EmptyImageError,
    EmptyMaskError,
    EmptySelectionError,
    RegionOutOfBoundsError,
)
from .raster import BBox, HFMap, Raster

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)

DEFAULT_BLEND_ALPHA = 0.1  # weight on the candidate's own detail in the blend
DEFAULT_HISTOGRAM_BINS = 32


@dataclass(eq=False)
class Region:
    """A placement target inside a background image.

    ``shape_mask`` is a (h, w) mask in bbox-local coordinates; the
    ``orig_*`` fields carry the attributes of the cell originally
    annotated at this location, which drive candidate selection.
    """

    bbox: BBox
    shape_mask: Raster
    orig_category: str = ""
    orig_type: str = ""
    orig_area: int = 0

    def __post_init__(self) -> None:
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise RegionOutOfBoundsError(f"bbox {self.bbox} has nonpositive size")
        if self.shape_mask.shape[:2] != (h, w):
            raise DimensionMismatchError(
                f"shape_mask {self.shape_mask.shape[:2]} != bbox size {(h, w)}"
            )

    def require_inside(self, background: Raster) -> None:
        bh, bw = background.shape[:2]
        x, y, w, h = self.bbox
        if x < 0 or y < 0 or x + w > bw or y + h > bh:
            raise RegionOutOfBoundsError(
                f"bbox {self.bbox} outside background {bw}x{bh}"
            )


@dataclass(eq=False)
class StyleDescriptor:
    """Concatenated per-channel color histogram, normalized to sum 1."""

    bins_per_channel: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (3 * self.bins_per_channel,):
            raise DimensionMismatchError(
                f"descriptor length {self.values.shape} != 3*{self.bins_per_channel}"
            )


def _convolve3x3(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # replicate border padding; correlation with the 3x3 kernel
    p = np.pad(plane, 1, mode="edge")
    out = np.zeros_like(plane, dtype=np.float64)
    h, w = plane.shape
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * p[dy : dy + h, dx : dx + w]
    return out


def highpass(image: Raster, method: str = "sobel") -> HFMap:
    """Per-channel high-pass response of an 8-bit image.

    ``sobel`` (default) returns the gradient magnitude
    sqrt(Gx^2 + Gy^2) using the standard 3x3 Sobel kernels; ``laplacian``
    returns the absolute 4-neighbor Laplacian response.  Borders are
    replicate-padded, so a constant image maps to an all-zero response
    and adding a constant offset to every sample leaves the output
    unchanged (in the non-saturating range).
    """
    raster.require_image(image)
    img = np.asarray(image, dtype=np.float64)
    planes = [img] if img.ndim == 2 else [img[:, :, i] for i in range(img.shape[2])]
    out = []
    for plane in planes:
        if method == "sobel":
            gx = _convolve3x3(plane, SOBEL_X)
            gy = _convolve3x3(plane, SOBEL_Y)
            out.append(np.sqrt(gx * gx + gy * gy))
        elif method == "laplacian":
            out.append(np.abs(_convolve3x3(plane, LAPLACIAN)))
        else:
            raise ValueError(f"unknown highpass method {method!r}")
    if img.ndim == 2:
        return out[0]
    return np.stack(out, axis=2)


def blend_hf(ht: HFMap, hr: HFMap, alpha: float) -> HFMap:
    """Elementwise blend ``alpha * ht + (1 - alpha) * hr``.

    ``alpha`` weights the candidate's own detail; the remainder comes
    from the style reference.  Callers resample ``hr`` to ``ht``'s size
    beforehand.
    """
    ht = np.asarray(ht, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if ht.shape != hr.shape:
        raise DimensionMismatchError(f"HF shapes differ: {ht.shape} vs {hr.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    return alpha * ht + (1.0 - alpha) * hr


def normalize_hf_to_u8(hf: HFMap) -> Raster:
    """Min-max normalize a float map to uint8 over the whole map.

    A constant map (max == min) normalizes to all zeros.
    """
    hf = np.asarray(hf, dtype=np.float64)
    lo = float(hf.min())
    hi = float(hf.max())
    if hi <= lo:
        return np.zeros(hf.shape, dtype=np.uint8)
    scaled = (hf - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def stitch(background: Raster, hf: HFMap, region: Region) -> Raster:
    """Build a conditioning raster: background with HF detail in the region.

    Inside the region bbox, pixels where the shape mask is on receive the
    min-max-normalized HF map; everything else stays bit-identical to the
    background.  The HF map must already be sized to the bbox.
    """
    raster.require_image(background)
    region.require_inside(background)
    x, y, w, h = region.bbox
    if hf.shape[:2] != (h, w):
        raise DimensionMismatchError(f"hf {hf.shape[:2]} != bbox size {(h, w)}")
    hf_c = raster.channels(hf)
    bg_c = raster.channels(background)
    if hf_c not in (1, bg_c):
        raise DimensionMismatchError(f"cannot place {hf_c}-channel hf on {bg_c}-channel background")

    insert = normalize_hf_to_u8(hf)
    if bg_c == 3 and insert.ndim == 2:
        insert = np.repeat(insert[:, :, None], 3, axis=2)

    out = background.copy()
    sel = raster.mask_on(region.shape_mask)
    window = out[y : y + h, x : x + w]
    window[sel] = insert[sel]
    return out


def center_align(crop: Raster, mask: Raster, canvas: tuple[int, int]) -> tuple[Raster, Raster]:
    """Translate crop and mask so the mask centroid sits at the canvas center.

    The translation is rounded to the nearest integer.  Canvas pixels not
    covered by the translated crop are filled with neutral gray 128; the
    translated mask is zero outside its support so it stays binary.
    """
    if crop.shape[:2] != mask.shape[:2]:
        raise DimensionMismatchError(
            f"crop {crop.shape[:2]} and mask {mask.shape[:2]} sizes differ"
        )
    on = raster.mask_on(mask)
    if not on.any():
        raise EmptyMaskError("mask selects no pixels")
    ys, xs = np.nonzero(on)
    cy = float(ys.mean())
    cx = float(xs.mean())

    cw, ch = canvas
    target_x = (cw - 1) / 2.0
    target_y = (ch - 1) / 2.0
    dx = int(round(target_x - cx))
    dy = int(round(target_y - cy))

    out_crop = np.full(
        (ch, cw) if crop.ndim == 2 else (ch, cw, crop.shape[2]), 128, dtype=np.uint8
    )
    out_mask = np.zeros((ch, cw), dtype=np.uint8)

    src_h, src_w = crop.shape[:2]
    # overlap of the translated crop with the canvas
    sx0 = max(0, -dx)
    sy0 = max(0, -dy)
    sx1 = min(src_w, cw - dx)
    sy1 = min(src_h, ch - dy)
    if sx1 > sx0 and sy1 > sy0:
        out_crop[sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = crop[sy0:sy1, sx0:sx1]
        out_mask[sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = mask[sy0:sy1, sx0:sx1]
    return out_crop, out_mask


def feathered_composite(
    background: Raster,
    crop: Raster,
    mask: Raster,
    region: Region,
    feather_radius: int = 0,
) -> Raster:
    """Alpha-composite a crop over the background inside the region bbox.

    Alpha is the mask (scaled to [0, 1]) smoothed by a box filter of the
    given radius; radius 0 keeps the hard mask.  Pixels with alpha 0 are
    left untouched, and nothing outside the bbox is written.
    """
    raster.require_image(background)
    region.require_inside(background)
    x, y, w, h = region.bbox
    if crop.shape[:2] != (h, w) or mask.shape[:2] != (h, w):
        raise DimensionMismatchError("crop/mask must be resampled to the bbox size")

    alpha = raster.box_filter(mask.astype(np.float64) / 255.0, feather_radius)
    alpha = np.clip(alpha, 0.0, 1.0)
    if background.ndim == 3:
        alpha = alpha[:, :, None]
        if crop.ndim == 2:
            crop = np.repeat(crop[:, :, None], background.shape[2], axis=2)

    out = background.copy()
    window = out[y : y + h, x : x + w].astype(np.float64)
    blended = alpha * crop.astype(np.float64) + (1.0 - alpha) * window
    out[y : y + h, x : x + w] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


def color_histogram(
    image: Raster,
    mask: Raster | None = None,
    bins_per_channel: int = DEFAULT_HISTOGRAM_BINS,
) -> StyleDescriptor:
    """Staining-style descriptor: concatenated per-channel histograms.

    Bins have width 256 / bins_per_channel; the three channel histograms
    are concatenated and jointly normalized to sum 1, so a uniform
    single-color image puts exactly 1/3 in one bin of each channel.
    """
    raster.require_image(image)
    if raster.channels(image) != 3:
        raise DimensionMismatchError("color_histogram requires a 3-channel image")
    if 256 % bins_per_channel != 0:
        raise ValueError("bins_per_channel must divide 256")

    if mask is not None:
        sel = raster.mask_on(mask)
        if not sel.any():
            raise EmptySelectionError("mask selects no pixels")
        pixels = image[sel]
    else:
        pixels = image.reshape(-1, 3)
    if pixels.size == 0:
        raise EmptyImageError("image has no pixels")

    width = 256 // bins_per_channel
    idx = pixels // width
    values = np.zeros(3 * bins_per_channel, dtype=np.float64)
    for c in range(3):
        counts = np.bincount(idx[:, c], minlength=bins_per_channel)
        values[c * bins_per_channel : (c + 1) * bins_per_channel] = counts
    values /= values.sum()
    return StyleDescriptor(bins_per_channel=bins_per_channel, values=values)
