"""Abnormal-cell bank: construction and candidate/reference selection.

The bank is built once from an annotated dataset and is immutable
afterwards; every selection operation is a read-only scan and safe to
call concurrently.

Candidate selection picks the banked cell of the requested category and
type whose mask area is closest to the target area.  Style-reference
selection picks the banked cell whose embedding has the highest cosine
similarity to the embedding of the original cell at the composition
site.  Both break ties by ascending record id so runs are reproducible.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster
from .errors import (
    EmptyBankError,
    EmptyDatasetError,
    LengthMismatchError,
    MissingEmbeddingError,
    NoMatchError,
    ZeroVectorError,
)
from .imageproc import center_align
from .raster import BBox, Raster

SINGLE_CELL = "single_cell"
CLUMPS = "clumps"
CELL_TYPES = (SINGLE_CELL, CLUMPS)

BANK_INDEX_FILE = "bank.json"


@dataclass(eq=False)
class CellRecord:
    """One banked abnormal cell crop with its attributes."""

    id: int
    category: str
    cell_type: str
    area: int
    crop: Raster
    mask: Raster
    source_image_id: str
    source_bbox: BBox
    embedding: np.ndarray | None = None

    def validate(self) -> None:
        if self.crop.shape[:2] != self.mask.shape[:2]:
            raise ValueError(f"record {self.id}: crop/mask sizes differ")
        on = int(raster.mask_on(self.mask).sum())
        if self.area != on:
            raise ValueError(f"record {self.id}: area {self.area} != mask pixels {on}")
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"record {self.id}: unknown cell_type {self.cell_type!r}")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"record {self.id}: embedding norm {norm} not unit")


@dataclass
class SelectionQuery:
    """Target attributes for candidate selection."""

    category: str
    cell_type: str
    area: int
    exclude_source: str | None = None

    def __post_init__(self) -> None:
        if self.area <= 0:
            raise ValueError(f"query area must be positive, got {self.area}")


@dataclass
class ReferenceConstraint:
    """Optional restriction on style-reference selection."""

    category: str | None = None


@dataclass
class BankSamplingConfig:
    """Per-category sampling bounds and the sampling seed.

    The per-category cap is derived from the category name (a stable
    hash into [min_per_category, max_per_category]), so counts do not
    depend on the seed; the seed only controls which records are drawn.
    """

    min_per_category: int = 68
    max_per_category: int = 90
    seed: int = 0

    def cap_for(self, category: str) -> int:
        lo, hi = self.min_per_category, self.max_per_category
        if hi < lo:
            raise ValueError("max_per_category < min_per_category")
        span = hi - lo + 1
        return lo + zlib.crc32(category.encode("utf-8")) % span


@dataclass
class CellBank:
    """Immutable collection of cell records with a (category, type) index."""

    records: list[CellRecord]
    index: dict[tuple[str, str], list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.index:
            self.index = _build_index(self.records)
        self._by_id = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def record(self, record_id: int) -> CellRecord:
        return self._by_id[record_id]


def _build_index(records: list[CellRecord]) -> dict[tuple[str, str], list[int]]:
    buckets: dict[tuple[str, str], list[CellRecord]] = {}
    for rec in records:
        buckets.setdefault((rec.category, rec.cell_type), []).append(rec)
    return {
        key: [r.id for r in sorted(recs, key=lambda r: (r.area, r.id))]
        for key, recs in buckets.items()
    }


# --- construction ---------------------------------------------------------

def build_bank(dataset, sampling: BankSamplingConfig, segment_backend=None) -> CellBank:
    """Sample annotated regions into a bank of cell crops.

    Per category the bank keeps min(available, cap) records, where the
    cap comes from ``sampling.cap_for``.  Crops are cut from the source
    images; masks come from the annotation, or from ``segment_backend``
    when the annotation has none.  Record areas are recomputed from the
    rasterized masks.
    """
    from . import dataio  # deferred: dataio imports selection types from here

    annotations = list(dataset.annotations)
    if not annotations:
        raise EmptyDatasetError("dataset has no annotated regions")

    by_category: dict[str, list] = {}
    for ann in annotations:
        by_category.setdefault(ann.category, []).append(ann)

    rng = random.Random(sampling.seed)
    records: list[CellRecord] = []
    image_cache: dict[str, Raster] = {}
    next_id = 0
    for category in sorted(by_category):
        anns = by_category[category]
        count = min(len(anns), sampling.cap_for(category))
        chosen = sorted(rng.sample(range(len(anns)), count))
        for idx in chosen:
            ann = anns[idx]
            if ann.image_id not in image_cache:
                image_cache[ann.image_id] = dataio.load_image(dataset, ann.image_id)
            image = image_cache[ann.image_id]
            x, y, w, h = ann.bbox
            crop = image[y : y + h, x : x + w].copy()
            mask = dataio.annotation_mask(ann, segment_backend=segment_backend, image=image)
            rec = CellRecord(
                id=next_id,
                category=ann.category,
                cell_type=ann.cell_type,
                area=int(raster.mask_on(mask).sum()),
                crop=crop,
                mask=mask,
                source_image_id=ann.image_id,
                source_bbox=tuple(ann.bbox),
            )
            rec.validate()
            records.append(rec)
            next_id += 1
    return CellBank(records=records)


def masked_cell_view(crop: Raster, mask: Raster) -> tuple[Raster, Raster]:
    """Mask-cropped, center-aligned view of a cell used for embeddings.

    Non-cell pixels are replaced with neutral gray 128 before the mask
    centroid is translated to the center of a canvas of the crop's size.
    """
    view = crop.copy()
    off = ~raster.mask_on(mask)
    view[off] = 128
    h, w = crop.shape[:2]
    return center_align(view, mask, (w, h))


def attach_embeddings(bank: CellBank, embed_backend) -> None:
    """Compute and attach an embedding for every record (build-time step)."""
    for rec in bank.records:
        view, aligned_mask = masked_cell_view(rec.crop, rec.mask)
        bundle = embed_backend.embed(view, aligned_mask)
        rec.embedding = np.asarray(bundle.global_vec, dtype=np.float64)


# --- selection ------------------------------------------------------------

def select_candidate(bank: CellBank, query: SelectionQuery) -> CellRecord:
    """Pick the feasible record whose area is closest to the query area.

    Feasible means matching category and cell type, excluding records
    whose source image equals ``query.exclude_source``.  Ties on the
    area distance go to the smallest record id.
    """
    if not bank.records:
        raise EmptyBankError("bank is empty")
    bucket = bank.index.get((query.category, query.cell_type), [])
    best: CellRecord | None = None
    best_key: tuple[int, int] | None = None
    for rid in bucket:
        rec = bank.record(rid)
        if query.exclude_source is not None and rec.source_image_id == query.exclude_source:
            continue
        key = (abs(rec.area - query.area), rec.id)
        if best_key is None or key < best_key:
            best, best_key = rec, key
    if best is None:
        raise NoMatchError(
            f"no record with category={query.category!r} type={query.cell_type!r}"
            " after source exclusion"
        )
    return best


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, clipped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise LengthMismatchError(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        raise ZeroVectorError("cosine similarity undefined for near-zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def select_style_reference(
    bank: CellBank,
    orig_embedding,
    constraint: ReferenceConstraint | None = None,
) -> CellRecord:
    """Pick the bank record most similar to the original cell's embedding.

    Similarity is cosine over embeddings; ties go to the smallest id.
    An optional constraint restricts the scan to one category.
    """
    if not bank.records:
        raise EmptyBankError("bank is empty")
    for rec in bank.records:
        if rec.embedding is None:
            raise MissingEmbeddingError(f"record {rec.id} has no embedding")
    constraint = constraint or ReferenceConstraint()

    eligible = [
        rec
        for rec in sorted(bank.records, key=lambda r: r.id)
        if constraint.category is None or rec.category == constraint.category
    ]
    if not eligible:
        raise NoMatchError(f"no record in category {constraint.category!r}")

    query = np.asarray(orig_embedding, dtype=np.float64)
    matrix = np.stack([np.asarray(rec.embedding, dtype=np.float64) for rec in eligible])
    qnorm = float(np.linalg.norm(query))
    norms = np.linalg.norm(matrix, axis=1)
    if qnorm < 1e-12 or float(norms.min()) < 1e-12:
        raise ZeroVectorError("cosine similarity undefined for near-zero vectors")
    sims = np.clip((matrix @ query) / (norms * qnorm), -1.0, 1.0)
    # argmax returns the first maximum; records are id-sorted, so exact
    # ties resolve to the smallest id
    return eligible[int(np.argmax(sims))]


# --- persistence ------------------------------------------------------------
#
# Bank directory layout:
#   bank.json        records array with scalar fields, embedding, and
#                    relative crop/mask paths
#   crops/<id>.png   RGB crop
#   masks/<id>.png   single-channel mask

def save_bank(bank: CellBank, directory) -> None:
    root = Path(directory)
    (root / "crops").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in bank.records:
        crop_rel = f"crops/{rec.id}.png"
        mask_rel = f"masks/{rec.id}.png"
        raster.save_png(rec.crop, root / crop_rel)
        raster.save_png(rec.mask, root / mask_rel)
        entries.append(
            {
                "id": rec.id,
                "category": rec.category,
                "cell_type": rec.cell_type,
                "area": rec.area,
                "source_image_id": rec.source_image_id,
                "source_bbox": list(rec.source_bbox),
                "crop": crop_rel,
                "mask": mask_rel,
                "embedding": None
                if rec.embedding is None
                else [float(x) for x in rec.embedding],
            }
        )
    payload = {"records": entries}
    with open(root / BANK_INDEX_FILE, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bank(directory) -> CellBank:
    root = Path(directory)
    with open(root / BANK_INDEX_FILE, encoding="utf-8") as fh:
        payload = json.load(fh)
    records = []
    for entry in payload["records"]:
        emb = entry.get("embedding")
        records.append(
            CellRecord(
                id=int(entry["id"]),
                category=entry["category"],
                cell_type=entry["cell_type"],
                area=int(entry["area"]),
                crop=raster.load_png(root / entry["crop"]),
                mask=raster.load_png(root / entry["mask"]),
                source_image_id=entry["source_image_id"],
                source_bbox=tuple(entry["source_bbox"]),
                embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
            )
        )
    return CellBank(records=records)
