"""Deterministic reference backends for offline runs and tests.

Each backend is a pure function of its inputs (plus the request seed),
so repeated calls are byte-identical and whole pipeline runs can be
compared file-for-file.  They stand in for the neural services:
segmentation returns an inscribed ellipse, embedding a color-histogram
vector, generation a feathered paste with detail re-injection, and
judging a seam-smoothness comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import raster
from ..errors import DimensionMismatchError, RegionOutOfBoundsError
from ..imageproc import Region, feathered_composite, highpass
from ..raster import BBox, Raster
from .types import EmbeddingBundle, GenerationRequest, VlmVerdict, parse_verdict

_HIST_BINS = 16  # 3 channels x 16 bins = 48 raw features


@dataclass
class ReferenceSegmentationBackend:
    """Returns the ellipse inscribed in the requested bbox."""

    def segment(self, image: Raster, bbox: BBox) -> Raster:
        raster.require_image(image)
        x, y, w, h = bbox
        ih, iw = image.shape[:2]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise RegionOutOfBoundsError(f"bbox {bbox} outside image {iw}x{ih}")
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        ry, rx = h / 2.0, w / 2.0
        ys = (np.arange(h)[:, None] - cy) / ry
        xs = (np.arange(w)[None, :] - cx) / rx
        inside = ys * ys + xs * xs <= 1.0
        return np.where(inside, 255, 0).astype(np.uint8)


def _histogram_features(pixels: np.ndarray) -> np.ndarray:
    width = 256 // _HIST_BINS
    feats = np.zeros(3 * _HIST_BINS, dtype=np.float64)
    if pixels.size == 0:
        return feats
    idx = pixels.astype(np.int64) // width
    for c in range(3):
        counts = np.bincount(idx[:, c], minlength=_HIST_BINS)
        feats[c * _HIST_BINS : (c + 1) * _HIST_BINS] = counts
    return feats


def _fit_dim(vec: np.ndarray, dim: int) -> np.ndarray:
    if vec.shape[0] >= dim:
        return vec[:dim]
    return np.concatenate([vec, np.zeros(dim - vec.shape[0])])


@dataclass
class ReferenceEmbeddingBackend:
    """Color-histogram embedding: permutation-invariant and deterministic.

    The global vector is the 48-bin histogram of the (optionally masked)
    image, zero-padded or truncated to ``dim`` and L2-normalized.  The
    tokens are the four quadrant histograms, normalized when nonzero.
    """

    dim: int = 768

    def embed(self, image: Raster, mask: Raster | None = None) -> EmbeddingBundle:
        raster.require_image(image)
        rgb = image if image.ndim == 3 else np.repeat(image[:, :, None], 3, axis=2)
        if mask is not None:
            sel = raster.mask_on(mask)
            pixels = rgb[sel] if sel.any() else rgb.reshape(-1, 3)
        else:
            pixels = rgb.reshape(-1, 3)

        feats = _fit_dim(_histogram_features(pixels), self.dim)
        norm = np.linalg.norm(feats)
        global_vec = feats / norm if norm > 0 else _unit_fallback(self.dim)

        h, w = rgb.shape[:2]
        hy, hx = max(1, h // 2), max(1, w // 2)
        quadrants = [
            (slice(0, hy), slice(0, hx)),
            (slice(0, hy), slice(hx, w)),
            (slice(hy, h), slice(0, hx)),
            (slice(hy, h), slice(hx, w)),
        ]
        tokens = []
        for sy, sx in quadrants:
            q = rgb[sy, sx].reshape(-1, 3)
            if mask is not None:
                qsel = raster.mask_on(mask[sy, sx]).reshape(-1)
                q = q[qsel]
            tok = _fit_dim(_histogram_features(q), self.dim)
            tnorm = np.linalg.norm(tok)
            tokens.append(tok / tnorm if tnorm > 0 else tok)
        bundle = EmbeddingBundle(global_vec=global_vec, tokens=tokens)
        bundle.validate()
        return bundle


def _unit_fallback(dim: int) -> np.ndarray:
    vec = np.zeros(dim)
    vec[0] = 1.0
    return vec


@dataclass
class ReferenceGenerationBackend:
    """Feathered paste of the candidate crop plus conditioning detail.

    The candidate crop rides in ``request.metadata['candidate_crop']``
    (with its mask under ``'candidate_mask'``); both are resampled to the
    bbox here.  After compositing with feather radius 2, the backend adds
    ``detail_gain`` times the conditioning's high-frequency residual
    (conditioning minus its box blur) inside the shape mask and clamps.
    Pixels outside the bbox are never written.
    """

    feather_radius: int = 2
    detail_gain: float = 0.2
    blur_radius: int = 2

    def generate(self, request: GenerationRequest) -> Raster:
        request.validate()
        x, y, w, h = request.bbox
        background = request.background
        region = Region(bbox=request.bbox, shape_mask=request.shape_mask)
        region.require_inside(background)

        crop = request.metadata.get("candidate_crop")
        if crop is None:
            raise DimensionMismatchError("reference generation needs metadata['candidate_crop']")
        crop = raster.resize_image(crop, (w, h))

        out = feathered_composite(
            background, crop, request.shape_mask, region, self.feather_radius
        )

        blurred = raster.box_filter(request.conditioning.astype(np.float64), self.blur_radius)
        residual = request.conditioning.astype(np.float64) - blurred
        window = out[y : y + h, x : x + w].astype(np.float64)
        sel = raster.mask_on(request.shape_mask)
        window[sel] += self.detail_gain * residual[y : y + h, x : x + w][sel]
        out[y : y + h, x : x + w] = np.clip(np.rint(window), 0, 255).astype(np.uint8)
        return out


def _seam_score(image: Raster, boundary: np.ndarray) -> float:
    grad = highpass(image)
    if grad.ndim == 3:
        grad = grad.mean(axis=2)
    return float(grad[boundary].mean())


@dataclass
class ReferenceJudgeBackend:
    """Prefers the image with the smoother composited seam.

    The changed region is recovered by diffing the two candidates (they
    share every pixel outside the composition site); the score is the
    mean gradient magnitude along that region's boundary, lower wins.
    Identical images are a documented tie resolved as choice A.
    """

    def judge(self, image_a: Raster, image_b: Raster, prompt: str) -> VlmVerdict:
        if image_a.shape != image_b.shape:
            raise DimensionMismatchError(
                f"judge images differ in shape: {image_a.shape} vs {image_b.shape}"
            )
        if np.array_equal(image_a, image_b):
            return parse_verdict("Choice: A\nReason: tie")

        diff = image_a.astype(np.int16) != image_b.astype(np.int16)
        changed = diff.any(axis=2) if diff.ndim == 3 else diff
        interior = (
            np.roll(changed, 1, 0)
            & np.roll(changed, -1, 0)
            & np.roll(changed, 1, 1)
            & np.roll(changed, -1, 1)
            & changed
        )
        # roll wraps around; border pixels are never interior
        interior[0, :] = interior[-1, :] = False
        interior[:, 0] = interior[:, -1] = False
        boundary = changed & ~interior
        if not boundary.any():
            boundary = changed

        score_a = _seam_score(image_a, boundary)
        score_b = _seam_score(image_b, boundary)
        choice = "A" if score_a <= score_b else "B"
        return parse_verdict(
            f"Choice: {choice}\nReason: seam gradient A={score_a:.4f} B={score_b:.4f}"
        )


@dataclass
class ReferenceBackends:
    """Bundle of the four reference backends."""

    segmentation: ReferenceSegmentationBackend
    embedding: ReferenceEmbeddingBackend
    generation: ReferenceGenerationBackend
    judge: ReferenceJudgeBackend


def reference_backends(embed_dim: int = 768) -> ReferenceBackends:
    return ReferenceBackends(
        segmentation=ReferenceSegmentationBackend(),
        embedding=ReferenceEmbeddingBackend(dim=embed_dim),
        generation=ReferenceGenerationBackend(),
        judge=ReferenceJudgeBackend(),
    )
