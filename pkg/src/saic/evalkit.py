"""Synthesis-quality metrics over embedding features.

The distribution distance between two feature sets is the Frechet
distance between their Gaussian summaries,

    d^2 = ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}),

computed via a symmetric eigendecomposition: with A = Sa^{1/2},
tr((Sa Sb)^{1/2}) = sum of square roots of the eigenvalues of A Sb A.
Eigenvalues below 1e-10 of the largest are clamped to zero, which keeps
rank-deficient summaries (n < d) finite without a fudge-epsilon on the
diagonal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cellbank import cosine_similarity
from .errors import (
    EmptyInputError,
    LengthMismatchError,
    NumericalFailureError,
    TooFewSamplesError,
)

EIG_CLAMP_REL = 1e-10


@dataclass(eq=False)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    count: int


def summarize(features) -> GaussianSummary:
    """Mean and unbiased covariance of an (n, d) feature array."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise TooFewSamplesError(f"expected (n, d) features, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise TooFewSamplesError(f"need at least 2 samples for a covariance, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / (n - 1)
    return GaussianSummary(mean=mean, covariance=covariance, count=n)


def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    sym = (C + C.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition failed: {exc}") from exc
    top = max(float(vals.max(initial=0.0)), 0.0)
    vals = np.where(vals < EIG_CLAMP_REL * top, 0.0, vals)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Frechet distance between two Gaussian summaries; symmetric, >= 0."""
    if a.mean.shape != b.mean.shape:
        raise LengthMismatchError(
            f"feature dims differ: {a.mean.shape[0]} vs {b.mean.shape[0]}"
        )
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    try:
        vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition failed: {exc}") from exc
    top = max(float(vals.max(initial=0.0)), 0.0)
    vals = np.where(vals < EIG_CLAMP_REL * top, 0.0, vals)
    vals = np.clip(vals, 0.0, None)
    tr_covmean = float(np.sqrt(vals).sum())
    value = float(diff @ diff) + float(np.trace(a.covariance) + np.trace(b.covariance)) - 2.0 * tr_covmean
    return max(value, 0.0)


def frechet_from_features(features_a, features_b) -> float:
    return frechet_distance(summarize(features_a), summarize(features_b))


def fidelity_score(vectors_a, vectors_b) -> float:
    """100 x mean cosine similarity over paired vectors."""
    if len(vectors_a) != len(vectors_b):
        raise LengthMismatchError(f"{len(vectors_a)} vs {len(vectors_b)} vectors")
    if len(vectors_a) == 0:
        raise EmptyInputError("fidelity needs at least one vector pair")
    sims = [cosine_similarity(a, b) for a, b in zip(vectors_a, vectors_b)]
    return 100.0 * float(np.mean(sims))


@dataclass(eq=False)
class StyleProjection:
    points: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d)
    explained_variance: np.ndarray  # (2,)


def style_projection(descriptors) -> StyleProjection:
    """Project style descriptors onto their top two principal axes.

    Sign convention: each component's largest-magnitude loading is made
    positive, so the projection is reproducible across runs and BLAS
    builds up to that deterministic choice.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise TooFewSamplesError(
            f"projection needs at least 3 descriptors of equal length, got shape {X.shape}"
        )
    centered = X - X.mean(axis=0)
    try:
        _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD failed: {exc}") from exc
    components = vt[:2].copy()
    for k in range(components.shape[0]):
        pivot = int(np.argmax(np.abs(components[k])))
        if components[k, pivot] < 0:
            components[k] = -components[k]
    points = centered @ components.T
    explained = (singular[:2] ** 2) / max(X.shape[0] - 1, 1)
    return StyleProjection(points=points, components=components, explained_variance=explained)


@dataclass
class TailStats:
    threshold: int
    counts: dict[str, int]
    tail: list[str]


def tail_stats(counts: dict[str, int], threshold: int = 500) -> TailStats:
    """Categories strictly below the threshold, sorted by name."""
    tail = sorted(c for c, n in counts.items() if n < threshold)
    return TailStats(threshold=threshold, counts=dict(counts), tail=tail)


def write_points_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
