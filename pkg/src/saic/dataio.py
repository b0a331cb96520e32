"""Dataset ingestion, emission, subsetting, and augmentation planning.

Three interchange formats are supported:

* canonical: one JSON file with schema tag ``saic-dataset/1`` (images,
  annotations, categories); key-sorted serialization is byte-stable.
* coco_json: images/annotations/categories arrays with polygon or
  uncompressed-RLE segmentation.
* yolo_txt: one ``labels/<image_id>.txt`` per image with normalized
  ``class cx cy w h`` rows (6-decimal fixed format), a ``classes.txt``
  naming classes, and an ``images.csv`` manifest carrying image sizes.

Composition sites are existing annotated regions: each plan entry
targets one annotation, whose attributes become the candidate query.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import raster
from .cellbank import CELL_TYPES, SINGLE_CELL, CellBank, SelectionQuery
from .errors import (
    EmptyBankError,
    InvalidRatioError,
    IoError,
    MissingMaskError,
    NoRegionsError,
    ParseError,
    SchemaError,
)
from .imageproc import Region
from .raster import BBox, Raster

CANONICAL_SCHEMA = "saic-dataset/1"
CANONICAL_JSON = "canonical_json"
COCO_JSON = "coco_json"
YOLO_TXT = "yolo_txt"
FORMATS = (CANONICAL_JSON, COCO_JSON, YOLO_TXT)

DEFAULT_TAIL_THRESHOLD = 500
TARGETING_UNIFORM = "uniform"
TARGETING_TAIL = "tail_weighted"


@dataclass
class ImageInfo:
    id: str
    path: str
    width: int
    height: int


@dataclass
class Annotation:
    image_id: str
    bbox: BBox
    category: str
    cell_type: str
    area: int
    mask: dict | None = None  # {"polygon": [x1,y1,...]} or {"rle": {"size": [h,w], "counts": [...]}}


@dataclass
class Dataset:
    images: list[ImageInfo]
    annotations: list[Annotation]
    categories: list[str]
    base_dir: str = field(default="", compare=False)

    def image(self, image_id: str) -> ImageInfo:
        for info in self.images:
            if info.id == image_id:
                return info
        raise KeyError(image_id)

    def category_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {c: 0 for c in self.categories}
        for ann in self.annotations:
            counts[ann.category] = counts.get(ann.category, 0) + 1
        return counts


def validate_dataset(dataset: Dataset) -> None:
    image_sizes = {info.id: (info.width, info.height) for info in dataset.images}
    if len(image_sizes) != len(dataset.images):
        raise SchemaError("images: duplicate image id")
    known = set(dataset.categories)
    for i, ann in enumerate(dataset.annotations):
        where = f"annotations[{i}]"
        if ann.image_id not in image_sizes:
            raise SchemaError(f"{where}.image_id: unknown image {ann.image_id!r}")
        w_img, h_img = image_sizes[ann.image_id]
        x, y, w, h = ann.bbox
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > w_img or y + h > h_img:
            raise SchemaError(f"{where}.bbox: {ann.bbox} outside image {w_img}x{h_img}")
        if ann.area <= 0:
            raise SchemaError(f"{where}.area: must be positive")
        if ann.category not in known:
            raise SchemaError(f"{where}.category: unknown category {ann.category!r}")
        if ann.cell_type not in CELL_TYPES:
            raise SchemaError(f"{where}.cell_type: {ann.cell_type!r}")


def load_image(dataset: Dataset, image_id: str) -> Raster:
    info = dataset.image(image_id)
    path = Path(dataset.base_dir) / info.path if dataset.base_dir else Path(info.path)
    return raster.load_png(path)


# --- masks ------------------------------------------------------------------

def annotation_mask(
    ann: Annotation,
    segment_backend=None,
    image: Raster | None = None,
    on_missing: str = "error",
) -> Raster:
    """Rasterize an annotation's mask into bbox-local coordinates.

    Polygon coordinates are absolute image coordinates; RLE is the COCO
    uncompressed column-major encoding over the full image.  Without a
    stored mask the segmentation backend is consulted; ``on_missing``
    chooses between raising and a full-bbox rectangle fallback.
    """
    x, y, w, h = ann.bbox
    if ann.mask and "polygon" in ann.mask:
        pts = ann.mask["polygon"]
        if len(pts) < 6 or len(pts) % 2 != 0:
            raise SchemaError("mask.polygon: need at least 3 (x, y) pairs")
        canvas = Image.new("L", (w, h), 0)
        shifted = [(pts[i] - x, pts[i + 1] - y) for i in range(0, len(pts), 2)]
        ImageDraw.Draw(canvas).polygon(shifted, fill=255)
        return np.asarray(canvas, dtype=np.uint8)
    if ann.mask and "rle" in ann.mask:
        full = _decode_rle(ann.mask["rle"])
        return full[y : y + h, x : x + w].copy()
    if segment_backend is not None and image is not None:
        return segment_backend.segment(image, ann.bbox)
    if on_missing == "full":
        return np.full((h, w), 255, dtype=np.uint8)
    raise MissingMaskError(
        f"annotation on image {ann.image_id!r} has no mask and no segmentation backend"
    )


def _decode_rle(rle: dict) -> Raster:
    try:
        h, w = rle["size"]
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"mask.rle: {exc}") from exc
    if isinstance(counts, str):
        raise ParseError("mask.rle.counts: compressed RLE strings are not supported")
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 255
        pos += run
        value ^= 1
    if pos != h * w:
        raise SchemaError(f"mask.rle.counts: runs cover {pos} of {h * w} pixels")
    return flat.reshape((w, h)).T.copy()  # counts run down columns


def mask_to_rle(mask: Raster) -> dict:
    """Encode a full-image mask as COCO uncompressed column-major RLE."""
    h, w = mask.shape[:2]
    flat = raster.mask_on(mask).T.reshape(-1)
    counts = []
    current = False
    run = 0
    for v in flat:
        if v == current:
            run += 1
        else:
            counts.append(run)
            current = bool(v)
            run = 1
    counts.append(run)
    return {"size": [h, w], "counts": [int(c) for c in counts]}


# --- import -------------------------------------------------------------------

def import_dataset(path, format: str, category_map: dict[str, str] | None = None) -> Dataset:
    if format == CANONICAL_JSON:
        dataset = _import_canonical(Path(path))
    elif format == COCO_JSON:
        dataset = _import_coco(Path(path))
    elif format == YOLO_TXT:
        dataset = _import_yolo(Path(path))
    else:
        raise ParseError(f"unknown dataset format {format!r}")
    if category_map:
        for ann in dataset.annotations:
            ann.category = category_map.get(ann.category, ann.category)
    validate_dataset(dataset)
    return dataset


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _import_canonical(path: Path) -> Dataset:
    payload = _load_json(path)
    if payload.get("schema") != CANONICAL_SCHEMA:
        raise SchemaError(f"schema: expected {CANONICAL_SCHEMA!r}, got {payload.get('schema')!r}")
    try:
        images = [
            ImageInfo(
                id=str(img["id"]),
                path=img["path"],
                width=int(img["width"]),
                height=int(img["height"]),
            )
            for img in payload["images"]
        ]
        annotations = [
            Annotation(
                image_id=str(ann["image_id"]),
                bbox=tuple(int(v) for v in ann["bbox"]),
                category=ann["category"],
                cell_type=ann["cell_type"],
                area=int(ann["area"]),
                mask=ann.get("mask"),
            )
            for ann in payload["annotations"]
        ]
        categories = list(payload["categories"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"canonical dataset field error: {exc}") from exc
    return Dataset(
        images=images,
        annotations=annotations,
        categories=categories,
        base_dir=str(path.parent),
    )


def _import_coco(path: Path) -> Dataset:
    payload = _load_json(path)
    try:
        cat_names = {int(c["id"]): c["name"] for c in payload["categories"]}
        images = [
            ImageInfo(
                id=str(img["id"]),
                path=img.get("file_name", img.get("path", "")),
                width=int(img["width"]),
                height=int(img["height"]),
            )
            for img in payload["images"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"coco field error: {exc}") from exc
    annotations = []
    for i, ann in enumerate(payload.get("annotations", [])):
        try:
            cat_id = int(ann["category_id"])
            if cat_id not in cat_names:
                raise SchemaError(f"annotations[{i}].category_id: unknown id {cat_id}")
            bbox = tuple(int(round(float(v))) for v in ann["bbox"])
            mask = _coco_segmentation(ann.get("segmentation"))
            cell_type = ann.get("cell_type")
            if cell_type is None:
                cell_type = "clumps" if ann.get("iscrowd") else SINGLE_CELL
            area = int(round(float(ann.get("area", bbox[2] * bbox[3]))))
            annotations.append(
                Annotation(
                    image_id=str(ann["image_id"]),
                    bbox=bbox,
                    category=cat_names[cat_id],
                    cell_type=cell_type,
                    area=area,
                    mask=mask,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"annotations[{i}]: {exc}") from exc
    categories = [cat_names[k] for k in sorted(cat_names)]
    return Dataset(
        images=images,
        annotations=annotations,
        categories=categories,
        base_dir=str(path.parent),
    )


def _coco_segmentation(seg) -> dict | None:
    if seg is None or seg == []:
        return None
    if isinstance(seg, dict):  # RLE
        return {"rle": {"size": list(seg["size"]), "counts": list(seg["counts"])}}
    if isinstance(seg, list):  # polygon list; first polygon wins
        return {"polygon": [float(v) for v in seg[0]]}
    raise SchemaError(f"segmentation: unsupported value {type(seg).__name__}")


def _import_yolo(root: Path) -> Dataset:
    classes_file = root / "classes.txt"
    try:
        categories = [
            line.strip()
            for line in classes_file.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    except OSError as exc:
        raise ParseError(f"{classes_file}: {exc}") from exc

    sizes: dict[str, tuple[str, int, int]] = {}
    manifest = root / "images.csv"
    if manifest.exists():
        with open(manifest, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                sizes[row["id"]] = (row["path"], int(row["width"]), int(row["height"]))

    label_dir = root / "labels"
    if not label_dir.is_dir():
        raise ParseError(f"{label_dir}: no labels directory")
    images: list[ImageInfo] = []
    annotations: list[Annotation] = []
    for label_file in sorted(label_dir.glob("*.txt")):
        image_id = label_file.stem
        if image_id in sizes:
            rel, width, height = sizes[image_id]
        else:
            rel, width, height = _find_image(root, image_id, label_file)
        images.append(ImageInfo(id=image_id, path=rel, width=width, height=height))
        for lineno, line in enumerate(
            label_file.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ParseError(f"{label_file}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                cls = int(parts[0])
                cx, cy, bw, bh = (float(v) for v in parts[1:])
            except ValueError as exc:
                raise ParseError(f"{label_file}:{lineno}: {exc}") from exc
            if not 0 <= cls < len(categories):
                raise SchemaError(f"{label_file}:{lineno}: class index {cls} out of range")
            w_px = int(round(bw * width))
            h_px = int(round(bh * height))
            x_px = int(round(cx * width - w_px / 2.0))
            y_px = int(round(cy * height - h_px / 2.0))
            annotations.append(
                Annotation(
                    image_id=image_id,
                    bbox=(x_px, y_px, w_px, h_px),
                    category=categories[cls],
                    cell_type=SINGLE_CELL,
                    area=max(1, w_px * h_px),
                )
            )
    return Dataset(
        images=images, annotations=annotations, categories=categories, base_dir=str(root)
    )


def _find_image(root: Path, image_id: str, label_file: Path) -> tuple[str, int, int]:
    for ext in (".png", ".jpg", ".jpeg", ".bmp"):
        candidate = root / "images" / f"{image_id}{ext}"
        if candidate.exists():
            with Image.open(candidate) as img:
                return f"images/{image_id}{ext}", img.width, img.height
    raise ParseError(f"{label_file}: no size for image {image_id!r} (images.csv or images/ needed)")


# --- export -------------------------------------------------------------------

def canonical_dict(dataset: Dataset) -> dict:
    return {
        "schema": CANONICAL_SCHEMA,
        "categories": list(dataset.categories),
        "images": [
            {"id": i.id, "path": i.path, "width": i.width, "height": i.height}
            for i in dataset.images
        ],
        "annotations": [
            {
                "image_id": a.image_id,
                "bbox": list(a.bbox),
                "category": a.category,
                "cell_type": a.cell_type,
                "area": a.area,
                "mask": a.mask,
            }
            for a in dataset.annotations
        ],
    }


def dump_canonical_json(dataset: Dataset) -> str:
    return json.dumps(canonical_dict(dataset), sort_keys=True, separators=(",", ":")) + "\n"


def export_dataset(dataset: Dataset, format: str, path) -> None:
    validate_dataset(dataset)
    try:
        if format == CANONICAL_JSON:
            out = Path(path)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(dump_canonical_json(dataset), encoding="utf-8")
        elif format == COCO_JSON:
            _export_coco(dataset, Path(path))
        elif format == YOLO_TXT:
            _export_yolo(dataset, Path(path))
        else:
            raise ParseError(f"unknown dataset format {format!r}")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _export_coco(dataset: Dataset, path: Path) -> None:
    cat_ids = {name: i + 1 for i, name in enumerate(dataset.categories)}

    def _img_id(s: str) -> int:
        return int(s) if s.isdigit() else dataset.images.index(dataset.image(s)) + 1

    payload = {
        "categories": [{"id": i, "name": n} for n, i in sorted(cat_ids.items(), key=lambda kv: kv[1])],
        "images": [
            {"id": _img_id(i.id), "file_name": i.path, "width": i.width, "height": i.height}
            for i in dataset.images
        ],
        "annotations": [
            {
                "id": k + 1,
                "image_id": _img_id(a.image_id),
                "category_id": cat_ids[a.category],
                "bbox": list(a.bbox),
                "area": a.area,
                "iscrowd": 1 if a.cell_type == "clumps" else 0,
                "cell_type": a.cell_type,
                "segmentation": _coco_segmentation_out(a.mask),
            }
            for k, a in enumerate(dataset.annotations)
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _coco_segmentation_out(mask: dict | None):
    if mask is None:
        return None
    if "polygon" in mask:
        return [list(mask["polygon"])]
    return {"size": mask["rle"]["size"], "counts": mask["rle"]["counts"]}


def _export_yolo(dataset: Dataset, root: Path) -> None:
    label_dir = root / "labels"
    label_dir.mkdir(parents=True, exist_ok=True)
    cls_idx = {name: i for i, name in enumerate(dataset.categories)}
    (root / "classes.txt").write_text(
        "".join(f"{name}\n" for name in dataset.categories), encoding="utf-8"
    )
    with open(root / "images.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "width", "height"])
        for info in dataset.images:
            writer.writerow([info.id, info.path, info.width, info.height])
    by_image: dict[str, list[Annotation]] = {info.id: [] for info in dataset.images}
    for ann in dataset.annotations:
        by_image[ann.image_id].append(ann)
    for info in dataset.images:
        lines = []
        for ann in by_image[info.id]:
            x, y, w, h = ann.bbox
            cx = (x + w / 2.0) / info.width
            cy = (y + h / 2.0) / info.height
            lines.append(
                f"{cls_idx[ann.category]} {cx:.6f} {cy:.6f} "
                f"{w / info.width:.6f} {h / info.height:.6f}\n"
            )
        (label_dir / f"{info.id}.txt").write_text("".join(lines), encoding="utf-8")


# --- subsetting ---------------------------------------------------------------

def sample_subset(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Stratified subset: keep round(ratio * n) annotations per category.

    Categories with at least one annotation keep at least one; images
    are retained iff they keep an annotation.  Deterministic in the seed.
    """
    if not 0.0 < ratio <= 1.0:
        raise InvalidRatioError(f"ratio {ratio} outside (0, 1]")
    rng = random.Random(seed)
    by_category: dict[str, list[int]] = {}
    for i, ann in enumerate(dataset.annotations):
        by_category.setdefault(ann.category, []).append(i)
    keep: set[int] = set()
    for category in sorted(by_category):
        idxs = by_category[category]
        count = max(1, int(round(ratio * len(idxs))))
        count = min(count, len(idxs))
        keep.update(rng.sample(idxs, count))
    annotations = [ann for i, ann in enumerate(dataset.annotations) if i in keep]
    used_images = {ann.image_id for ann in annotations}
    images = [info for info in dataset.images if info.id in used_images]
    return Dataset(
        images=images,
        annotations=annotations,
        categories=list(dataset.categories),
        base_dir=dataset.base_dir,
    )


# --- planning -------------------------------------------------------------------

@dataclass(eq=False)
class PlanEntry:
    background_image_id: str
    region: Region
    candidate_query: SelectionQuery


@dataclass
class AugmentationPlan:
    entries: list[PlanEntry]
    seed: int
    expand_ratio: float


def plan_augmentation(
    dataset: Dataset,
    bank: CellBank,
    expand_ratio: float,
    targeting: str = TARGETING_TAIL,
    tail_threshold: int = DEFAULT_TAIL_THRESHOLD,
    seed: int = 0,
) -> AugmentationPlan:
    """Choose which annotated regions get a composed replacement.

    Produces ceil(expand_ratio * |images|) entries.  ``tail_weighted``
    targeting samples categories with weight 1/count and reserves at
    least half of the entries for categories with fewer than
    ``tail_threshold`` annotations.
    """
    if expand_ratio < 0:
        raise InvalidRatioError(f"expand_ratio {expand_ratio} must be >= 0")
    if len(bank) == 0:
        raise EmptyBankError("augmentation planning needs a nonempty bank")
    n_entries = math.ceil(expand_ratio * len(dataset.images))
    if n_entries == 0:
        return AugmentationPlan(entries=[], seed=seed, expand_ratio=expand_ratio)
    if not dataset.annotations:
        raise NoRegionsError("dataset has no annotated regions to target")

    by_category: dict[str, list[Annotation]] = {}
    for ann in dataset.annotations:
        by_category.setdefault(ann.category, []).append(ann)
    counts = {c: len(v) for c, v in by_category.items()}
    all_cats = sorted(by_category)
    tail_cats = [c for c in all_cats if counts[c] < tail_threshold]

    rng = random.Random(seed)
    entries: list[PlanEntry] = []
    n_tail = math.ceil(n_entries / 2) if (targeting == TARGETING_TAIL and tail_cats) else 0
    for i in range(n_entries):
        if targeting == TARGETING_TAIL:
            pool = tail_cats if i < n_tail else all_cats
            weights = [1.0 / counts[c] for c in pool]
            category = rng.choices(pool, weights=weights, k=1)[0]
            ann = by_category[category][rng.randrange(len(by_category[category]))]
        elif targeting == TARGETING_UNIFORM:
            ann = dataset.annotations[rng.randrange(len(dataset.annotations))]
        else:
            raise ValueError(f"unknown targeting {targeting!r}")
        entries.append(_plan_entry(ann))
    return AugmentationPlan(entries=entries, seed=seed, expand_ratio=expand_ratio)


def _plan_entry(ann: Annotation) -> PlanEntry:
    shape_mask = annotation_mask(ann, on_missing="full")
    region = Region(
        bbox=tuple(ann.bbox),
        shape_mask=shape_mask,
        orig_category=ann.category,
        orig_type=ann.cell_type,
        orig_area=ann.area,
    )
    query = SelectionQuery(
        category=ann.category,
        cell_type=ann.cell_type,
        area=ann.area,
        exclude_source=ann.image_id,
    )
    return PlanEntry(background_image_id=ann.image_id, region=region, candidate_query=query)


# --- plan serialization -----------------------------------------------------

def _mask_to_b64(mask: Raster) -> str:
    return base64.b64encode(raster.encode_png(mask)).decode("ascii")


def _mask_from_b64(data: str) -> Raster:
    return raster.decode_png(base64.b64decode(data))


def plan_to_dict(plan: AugmentationPlan) -> dict:
    return {
        "seed": plan.seed,
        "expand_ratio": plan.expand_ratio,
        "entries": [
            {
                "background_image_id": e.background_image_id,
                "region": {
                    "bbox": list(e.region.bbox),
                    "shape_mask_png": _mask_to_b64(e.region.shape_mask),
                    "orig_category": e.region.orig_category,
                    "orig_type": e.region.orig_type,
                    "orig_area": e.region.orig_area,
                },
                "candidate_query": {
                    "category": e.candidate_query.category,
                    "cell_type": e.candidate_query.cell_type,
                    "area": e.candidate_query.area,
                    "exclude_source": e.candidate_query.exclude_source,
                },
            }
            for e in plan.entries
        ],
    }


def plan_from_dict(payload: dict) -> AugmentationPlan:
    entries = []
    for e in payload["entries"]:
        r = e["region"]
        q = e["candidate_query"]
        entries.append(
            PlanEntry(
                background_image_id=e["background_image_id"],
                region=Region(
                    bbox=tuple(r["bbox"]),
                    shape_mask=_mask_from_b64(r["shape_mask_png"]),
                    orig_category=r["orig_category"],
                    orig_type=r["orig_type"],
                    orig_area=int(r["orig_area"]),
                ),
                candidate_query=SelectionQuery(
                    category=q["category"],
                    cell_type=q["cell_type"],
                    area=int(q["area"]),
                    exclude_source=q["exclude_source"],
                ),
            )
        )
    return AugmentationPlan(
        entries=entries, seed=int(payload["seed"]), expand_ratio=float(payload["expand_ratio"])
    )


def save_plan(plan: AugmentationPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_plan(path) -> AugmentationPlan:
    with open(path, encoding="utf-8") as fh:
        return plan_from_dict(json.load(fh))
