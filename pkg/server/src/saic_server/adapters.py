"""Model adapters behind the four protocol endpoints.

The classical family runs everywhere with no weight files: Otsu or
inscribed-ellipse segmentation, histogram embeddings, high-frequency
paint-in composition, and a seam-gradient judge.  The torch family is
optional: a seeded random-features CNN needs no downloads, and a
torchvision backbone loads a locally stored state dict (ids look like
``torchvision/resnet18:/path/weights.pt``).

All adapters are stateless after construction and safe to share across
request threads.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .wire import WireError, require_bbox


class ModelLoadError(RuntimeError):
    """Model id unknown or its weights are not resolvable."""


# --- small numerics -----------------------------------------------------------

def _box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window, edge windows clipped to the image."""
    if radius <= 0:
        return values.astype(np.float64, copy=True)
    arr = values.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    padded = np.zeros((h + 1, w + 1, c), dtype=np.float64)
    padded[1:, 1:] = np.cumsum(np.cumsum(arr, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)
    y1 = np.clip(ys + radius + 1, 0, h)
    x0 = np.clip(xs - radius, 0, w)
    x1 = np.clip(xs + radius + 1, 0, w)
    sums = (
        padded[y1[:, None], x1[None, :]]
        - padded[y0[:, None], x1[None, :]]
        - padded[y1[:, None], x0[None, :]]
        + padded[y0[:, None], x0[None, :]]
    )
    areas = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    out = sums / areas[:, :, None]
    return out[:, :, 0] if values.ndim == 2 else out


def _gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    return image.astype(np.float64).mean(axis=2)


def _gradient_magnitude(image: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(_gray(image))
    return np.hypot(gx, gy)


def _shift_or(mask: np.ndarray) -> np.ndarray:
    """4-neighborhood dilation."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _inscribed_ellipse(h: int, w: int) -> np.ndarray:
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ry, rx = max(h / 2.0 - 0.5, 0.5), max(w / 2.0 - 0.5, 0.5)
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return inside.astype(np.uint8) * 255


# --- segmentation ---------------------------------------------------------------

class EllipseSegmenter:
    """Shape prior only: the inscribed ellipse of the box."""

    model_id = "classical/ellipse"

    def segment(self, image: np.ndarray, bbox) -> np.ndarray:
        x, y, w, h = require_bbox(bbox, image)
        return _inscribed_ellipse(h, w)


class OtsuSegmenter:
    """Otsu threshold inside the box; the minority class is the cell.

    Degenerate crops (constant intensity, or a threshold that captures
    everything) fall back to the inscribed ellipse so the mask is never
    empty.
    """

    model_id = "classical/otsu"

    def segment(self, image: np.ndarray, bbox) -> np.ndarray:
        x, y, w, h = require_bbox(bbox, image)
        crop = _gray(image[y : y + h, x : x + w])
        hist, _ = np.histogram(crop, bins=256, range=(0.0, 256.0))
        total = hist.sum()
        best_t, best_var = None, -1.0
        weight_b = 0.0
        sum_b = 0.0
        sum_all = float(np.dot(hist, np.arange(256)))
        for t in range(256):
            weight_b += hist[t]
            if weight_b == 0:
                continue
            weight_f = total - weight_b
            if weight_f == 0:
                break
            sum_b += t * hist[t]
            mean_b = sum_b / weight_b
            mean_f = (sum_all - sum_b) / weight_f
            var_between = weight_b * weight_f * (mean_b - mean_f) ** 2
            if var_between > best_var:
                best_var, best_t = var_between, t
        if best_t is None:
            return _inscribed_ellipse(h, w)
        below = crop <= best_t
        minority = below if below.sum() <= below.size / 2 else ~below
        if not minority.any() or minority.all():
            return _inscribed_ellipse(h, w)
        return minority.astype(np.uint8) * 255


# --- embedding -------------------------------------------------------------------

def _fit_dim(vec: np.ndarray, dim: int) -> np.ndarray:
    if vec.size == 0:
        vec = np.ones(1)
    reps = int(np.ceil(dim / vec.size))
    fitted = np.tile(vec, reps)[:dim]
    norm = float(np.linalg.norm(fitted))
    if norm < 1e-12:
        return np.full(dim, 1.0 / np.sqrt(dim))
    return fitted / norm


def _select_pixels(image: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    rgb = image if image.ndim == 3 else np.repeat(image[:, :, None], 3, axis=2)
    if mask is not None:
        on = mask > 127
        if on.any():
            return rgb[on].reshape(-1, 3)
    return rgb.reshape(-1, 3)


def _histogram_features(pixels: np.ndarray) -> np.ndarray:
    if pixels.size == 0:
        return np.zeros(102)
    parts = []
    for channel in range(3):
        hist, _ = np.histogram(pixels[:, channel], bins=32, range=(0.0, 256.0))
        parts.append(hist / max(1, pixels.shape[0]))
    stats = np.concatenate(
        [pixels.mean(axis=0) / 255.0, pixels.std(axis=0) / 255.0]
    )
    return np.concatenate(parts + [stats])


class HistogramEmbedder:
    """Color-distribution embedding, projected to the requested length."""

    model_id = "classical/histogram"

    def embed(self, image: np.ndarray, mask: np.ndarray | None, dim: int):
        rgb = image if image.ndim == 3 else np.repeat(image[:, :, None], 3, axis=2)
        global_vec = _fit_dim(_histogram_features(_select_pixels(rgb, mask)), dim)
        h, w = rgb.shape[:2]
        hy, hx = max(1, h // 2), max(1, w // 2)
        tokens = []
        for sy, sx in (
            (slice(0, hy), slice(0, hx)),
            (slice(0, hy), slice(hx, w)),
            (slice(hy, h), slice(0, hx)),
            (slice(hy, h), slice(hx, w)),
        ):
            sub_mask = None if mask is None else mask[sy, sx]
            tokens.append(_fit_dim(_histogram_features(_select_pixels(rgb[sy, sx], sub_mask)), dim))
        return global_vec, tokens


class TorchRandomFeaturesEmbedder:
    """Frozen random CNN features; deterministic via a fixed init seed.

    Random projections preserve enough structure for retrieval-style
    use and need no weight downloads, which keeps the torch path
    testable offline.
    """

    model_id = "torch/random-features"

    def __init__(self, device: str = "cpu"):
        try:
            import torch
            from torch import nn
        except ImportError as exc:  # pragma: no cover - env without torch
            raise ModelLoadError(f"torch unavailable: {exc}") from exc
        self._torch = torch
        torch.manual_seed(7)
        self._net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
        )
        self._net.eval().requires_grad_(False)
        self._device = device
        self._net.to(device)

    def _features(self, image: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        rgb = image if image.ndim == 3 else np.repeat(image[:, :, None], 3, axis=2)
        if mask is not None and (mask > 127).any():
            rgb = rgb.copy()
            rgb[mask <= 127] = 0
        resized = np.asarray(
            Image.fromarray(rgb, mode="RGB").resize((64, 64), Image.BILINEAR), dtype=np.float32
        )
        tensor = self._torch.from_numpy(resized / 255.0).permute(2, 0, 1)[None].to(self._device)
        with self._torch.no_grad():
            feats = self._net(tensor)[0].cpu().numpy().astype(np.float64)
        return feats

    def embed(self, image: np.ndarray, mask: np.ndarray | None, dim: int):
        global_vec = _fit_dim(self._features(image, mask), dim)
        h, w = image.shape[:2]
        hy, hx = max(1, h // 2), max(1, w // 2)
        tokens = []
        for sy, sx in (
            (slice(0, hy), slice(0, hx)),
            (slice(0, hy), slice(hx, w)),
            (slice(hy, h), slice(0, hx)),
            (slice(hy, h), slice(hx, w)),
        ):
            sub_mask = None if mask is None else mask[sy, sx]
            tokens.append(_fit_dim(self._features(image[sy, sx], sub_mask), dim))
        return global_vec, tokens


class TorchvisionEmbedder:
    """Pretrained backbone features loaded from a local state dict."""

    def __init__(self, arch: str, weights_path: str, device: str = "cpu"):
        try:
            import torch
            import torchvision.models as models
        except ImportError as exc:  # pragma: no cover - env without torch
            raise ModelLoadError(f"torchvision unavailable: {exc}") from exc
        import os

        if not os.path.exists(weights_path):
            raise ModelLoadError(
                f"weights file {weights_path!r} not found; download the {arch} "
                "state dict ahead of time and point the model id at it"
            )
        builder = getattr(models, arch, None)
        if builder is None:
            raise ModelLoadError(f"unknown torchvision architecture {arch!r}")
        self._torch = torch
        net = builder(weights=None)
        net.load_state_dict(torch.load(weights_path, map_location=device))
        net.fc = torch.nn.Identity()
        net.eval().requires_grad_(False)
        self._net = net.to(device)
        self._device = device
        self.model_id = f"torchvision/{arch}:{weights_path}"

    def embed(self, image: np.ndarray, mask: np.ndarray | None, dim: int):
        rgb = image if image.ndim == 3 else np.repeat(image[:, :, None], 3, axis=2)
        if mask is not None and (mask > 127).any():
            rgb = rgb.copy()
            rgb[mask <= 127] = 0
        resized = np.asarray(
            Image.fromarray(rgb, mode="RGB").resize((224, 224), Image.BILINEAR),
            dtype=np.float32,
        )
        tensor = self._torch.from_numpy(resized / 255.0).permute(2, 0, 1)[None].to(self._device)
        with self._torch.no_grad():
            feats = self._net(tensor)[0].cpu().numpy().astype(np.float64)
        global_vec = _fit_dim(feats, dim)
        return global_vec, [global_vec.copy() for _ in range(4)]


# --- generation ------------------------------------------------------------------

class HfPaintGenerator:
    """Paint the conditioned window into the background.

    The conditioning image carries the detail signal inside the box;
    composition feathers the shape mask, injects the conditioning's
    local high-frequency residual, and adds seeded sub-quantization
    dither so equal seeds reproduce byte-identical outputs.
    """

    model_id = "classical/hfpaint"

    def generate(
        self,
        background: np.ndarray,
        conditioning: np.ndarray,
        shape_mask: np.ndarray,
        bbox,
        id_tokens,
        seed: int,
        variant: str,
    ) -> np.ndarray:
        if background.shape[:2] != conditioning.shape[:2]:
            raise WireError("background and conditioning sizes differ")
        x, y, w, h = require_bbox(bbox, background)
        if shape_mask.shape[:2] != (h, w):
            raise WireError(f"shape_mask {shape_mask.shape[:2]} does not match bbox {h}x{w}")

        base = background[y : y + h, x : x + w].astype(np.float64)
        window = conditioning[y : y + h, x : x + w].astype(np.float64)
        if base.ndim == 2:
            base = base[:, :, None]
            window = window[:, :, None]

        alpha = np.clip(_box_mean((shape_mask > 127).astype(np.float64), 2), 0.0, 1.0)
        alpha = alpha[:, :, None]
        detail = window - _box_mean(window, 1)
        rng = np.random.default_rng(seed)
        dither = rng.uniform(-0.5, 0.5, size=base.shape)

        painted = base + (window - base) * alpha * 0.6 + detail * alpha * 0.3 + dither * alpha
        painted = np.clip(np.rint(painted), 0, 255).astype(np.uint8)
        if background.ndim == 2:
            painted = painted[:, :, 0]

        out = background.copy()
        out[y : y + h, x : x + w] = painted
        return out


# --- judging ---------------------------------------------------------------------

class SeamJudge:
    """Prefer the composite whose edit seam is smoother.

    The changed region is the pixel diff of the two candidates; each
    image is scored by mean gradient magnitude over a ring around that
    region's boundary, and the lower score wins.  Scores depend only on
    content, so argument order never changes the winning image.
    """

    model_id = "classical/seam"

    def judge(self, image_a: np.ndarray, image_b: np.ndarray, prompt: str) -> str:
        if image_a.shape != image_b.shape:
            raise WireError(
                f"judge images must share dimensions, got {image_a.shape} vs {image_b.shape}"
            )
        diff = image_a != image_b
        changed = diff.any(axis=2) if diff.ndim == 3 else diff
        if not changed.any():
            return "Choice: A\nReason: the candidates are pixel-identical."
        dilated = _shift_or(changed)
        ring = dilated & ~changed
        if not ring.any():
            ring = changed
        score_a = float(_gradient_magnitude(image_a)[ring].mean())
        score_b = float(_gradient_magnitude(image_b)[ring].mean())
        winner = "A" if score_a <= score_b else "B"
        return (
            f"Choice: {winner}\n"
            f"Reason: smoother seam gradient ({score_a:.3f} vs {score_b:.3f})."
        )


# --- registry ---------------------------------------------------------------------

_SEGMENTERS = {
    "classical/otsu": lambda device: OtsuSegmenter(),
    "classical/ellipse": lambda device: EllipseSegmenter(),
}
_EMBEDDERS = {
    "classical/histogram": lambda device: HistogramEmbedder(),
    "torch/random-features": lambda device: TorchRandomFeaturesEmbedder(device),
}
_GENERATORS = {
    "classical/hfpaint": lambda device: HfPaintGenerator(),
}
_JUDGES = {
    "classical/seam": lambda device: SeamJudge(),
}


def _build(registry: dict, model_id: str, device: str, endpoint: str):
    if model_id.startswith("torchvision/") and endpoint == "embedding":
        spec = model_id.split("/", 1)[1]
        if ":" not in spec:
            raise ModelLoadError(
                f"{endpoint}: {model_id!r} needs the form torchvision/<arch>:<weights-path>"
            )
        arch, weights_path = spec.split(":", 1)
        return TorchvisionEmbedder(arch, weights_path, device)
    builder = registry.get(model_id)
    if builder is None:
        known = sorted(registry)
        raise ModelLoadError(f"{endpoint}: unknown model id {model_id!r}; known: {known}")
    return builder(device)


def build_adapters(config) -> dict:
    """Resolve every configured model id; raises ModelLoadError on any miss."""
    return {
        "segmentation": _build(_SEGMENTERS, config.segmentation_model, config.device, "segmentation"),
        "embedding": _build(_EMBEDDERS, config.embedding_model, config.device, "embedding"),
        "generation": _build(_GENERATORS, config.generation_model, config.device, "generation"),
        "judge": _build(_JUDGES, config.judge_model, config.device, "judge"),
    }
