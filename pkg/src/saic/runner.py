"""End-to-end augmentation runs and their on-disk layout.

A run directory is fully reproducible from (config, dataset, bank): all
randomness flows from named substreams of the master seed, images are
re-encoded deterministically, and JSON is key-sorted.  Two runs of the
same config are byte-identical except for ``timings.json``, which holds
wall-clock stage totals and is the one intentionally non-reproducible
file.

Layout::

    config.lock.json          resolved config
    plan.json                 serialized augmentation plan
    pairs/<rid>.self.png      self_style variant
    pairs/<rid>.background.png background_style variant
    pairs/<rid>.json          pair metadata (ids, bbox, seed)
    filtration.jsonl          one judge verdict per kept pair
    filtration_stats.json     kept-variant accounting
    failures.jsonl            one line per failed entry (stage + error)
    timings.json              stage wall seconds: selection/composition/filtration
    dataset/dataset.json      augmented dataset (canonical schema)
    dataset/images/*.png      originals, re-encoded
    dataset/synthetic/*.png   kept composed images
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, raster
from .backends import (
    ClientConfig,
    HttpBackendClient,
    reference_backends,
)
from .cellbank import (
    BankSamplingConfig,
    CellBank,
    build_bank,
    attach_embeddings,
    load_bank,
    masked_cell_view,
    save_bank,
    select_candidate,
    select_style_reference,
)
from .composer import CompositionPair, compose_pair
from .config import (
    BACKEND_LIVE,
    TOKEN_ENV_VAR,
    RunConfig,
    dump_config,
    region_run_id,
    substream_seed,
)
from .dataio import Annotation, Dataset, ImageInfo
from .errors import MissingRunError, SaicError
from .evalkit import (
    fidelity_score,
    frechet_from_features,
    style_projection,
    tail_stats,
    write_points_csv,
)
from .filtration import (
    FilteredResult,
    aggregate_stats,
    filter_pair,
    read_results_jsonl,
    write_results_jsonl,
)
from .imageproc import color_histogram
from .raster import load_png, mask_on, resize_mask, save_png

STAGES = ("selection", "composition", "filtration")
SYNTHETIC_PREFIX = "syn_"


@dataclass
class BackendSet:
    segmentation: object
    embedding: object
    generation: object
    judge: object


def build_backends(config: RunConfig) -> BackendSet:
    if config.backend == BACKEND_LIVE:
        client = HttpBackendClient(
            ClientConfig(
                base_url=config.backend_url,
                token=os.environ.get(TOKEN_ENV_VAR),
                embed_dim=config.embed_dim,
            )
        )
        return BackendSet(
            segmentation=client, embedding=client, generation=client, judge=client
        )
    ref = reference_backends(embed_dim=config.embed_dim)
    ref.generation.feather_radius = config.feather_radius
    return BackendSet(
        segmentation=ref.segmentation,
        embedding=ref.embedding,
        generation=ref.generation,
        judge=ref.judge,
    )


# --- bank + plan commands ---------------------------------------------------

def run_build_bank(config: RunConfig) -> dict:
    dataset = dataio.import_dataset(config.dataset_path, config.dataset_format)
    backends = build_backends(config)
    sampling = BankSamplingConfig(
        min_per_category=config.min_per_category,
        max_per_category=config.max_per_category,
        seed=substream_seed(config.seed, "bank"),
    )
    bank = build_bank(dataset, sampling, segment_backend=backends.segmentation)
    attach_embeddings(bank, backends.embedding)
    save_bank(bank, config.bank_dir)
    counts: dict[str, int] = {}
    for rec in bank.records:
        counts[rec.category] = counts.get(rec.category, 0) + 1
    return {"records": len(bank), "per_category": counts, "bank_dir": config.bank_dir}


def run_plan(config: RunConfig) -> dict:
    dataset = dataio.import_dataset(config.dataset_path, config.dataset_format)
    bank = load_bank(config.bank_dir)
    plan = dataio.plan_augmentation(
        dataset,
        bank,
        config.expand_ratio,
        targeting=config.targeting,
        tail_threshold=config.tail_threshold,
        seed=substream_seed(config.seed, "plan"),
    )
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_plan(plan, out / "plan.json")
    return {"entries": len(plan.entries), "plan": str(out / "plan.json")}


# --- augment ---------------------------------------------------------------

@dataclass(eq=False)
class EntryOutcome:
    index: int
    region_id: str
    background_image_id: str
    pair: CompositionPair | None = None
    filtered: FilteredResult | None = None
    timings: dict | None = None
    stage: str = ""
    error: str = ""
    error_type: str = ""

    @property
    def ok(self) -> bool:
        return self.pair is not None and self.filtered is not None


@dataclass
class RunSummary:
    total: int
    failed: int
    background_kept: int
    self_kept: int
    output_dir: str

    @property
    def failure_fraction(self) -> float:
        return self.failed / self.total if self.total else 0.0


def _process_entry(
    index: int,
    entry: dataio.PlanEntry,
    background,
    bank: CellBank,
    backends: BackendSet,
    config: RunConfig,
) -> EntryOutcome:
    rid = region_run_id(index, entry.background_image_id)
    outcome = EntryOutcome(
        index=index, region_id=rid, background_image_id=entry.background_image_id
    )
    timings = dict.fromkeys(STAGES, 0.0)
    stage = "selection"
    try:
        t0 = time.perf_counter()
        candidate = select_candidate(bank, entry.candidate_query)
        x, y, w, h = entry.region.bbox
        orig_crop = background[y : y + h, x : x + w]
        view, aligned_mask = masked_cell_view(orig_crop, entry.region.shape_mask)
        orig_bundle = backends.embedding.embed(view, aligned_mask)
        reference = select_style_reference(bank, orig_bundle.global_vec)
        timings["selection"] = time.perf_counter() - t0

        stage = "composition"
        t0 = time.perf_counter()
        pair = compose_pair(
            background,
            entry.region,
            candidate,
            reference,
            embed_backend=backends.embedding,
            gen_backend=backends.generation,
            seed=substream_seed(config.seed, f"generate/{rid}"),
            alpha=config.alpha,
            hf_method=config.hf_method,
            region_id=rid,
        )
        timings["composition"] = time.perf_counter() - t0

        stage = "filtration"
        t0 = time.perf_counter()
        filtered = filter_pair(
            pair,
            backends.judge,
            seed=substream_seed(config.seed, f"shuffle/{rid}"),
            template_id=config.prompt_template,
            on_unparseable=config.on_unparseable,
        )
        timings["filtration"] = time.perf_counter() - t0
    except SaicError as exc:
        outcome.stage = stage
        outcome.error = str(exc)
        outcome.error_type = type(exc).__name__
        outcome.timings = timings
        return outcome
    outcome.pair = pair
    outcome.filtered = filtered
    outcome.timings = timings
    return outcome


def run_augment(config: RunConfig) -> RunSummary:
    out = Path(config.output_dir)
    pairs_dir = out / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.lock.json").write_text(dump_config(config), encoding="utf-8")

    dataset = dataio.import_dataset(config.dataset_path, config.dataset_format)
    bank = load_bank(config.bank_dir)
    plan = dataio.plan_augmentation(
        dataset,
        bank,
        config.expand_ratio,
        targeting=config.targeting,
        tail_threshold=config.tail_threshold,
        seed=substream_seed(config.seed, "plan"),
    )
    dataio.save_plan(plan, out / "plan.json")

    backends = build_backends(config)
    images = {
        image_id: dataio.load_image(dataset, image_id)
        for image_id in sorted({e.background_image_id for e in plan.entries})
    }

    def work(i: int) -> EntryOutcome:
        entry = plan.entries[i]
        return _process_entry(
            i, entry, images[entry.background_image_id], bank, backends, config
        )

    indices = range(len(plan.entries))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(work, indices))
    else:
        outcomes = [work(i) for i in indices]

    results: list[FilteredResult] = []
    stage_totals = dict.fromkeys(STAGES, 0.0)
    with open(out / "failures.jsonl", "w", encoding="utf-8") as fail_fh:
        for outcome in outcomes:
            for stage in STAGES:
                stage_totals[stage] += outcome.timings[stage]
            if not outcome.ok:
                fail_fh.write(
                    json.dumps(
                        {
                            "region_id": outcome.region_id,
                            "stage": outcome.stage,
                            "type": outcome.error_type,
                            "error": outcome.error,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                continue
            _write_pair(pairs_dir, outcome)
            results.append(outcome.filtered)

    write_results_jsonl(results, out / "filtration.jsonl")
    stats = aggregate_stats(results)
    (out / "filtration_stats.json").write_text(
        json.dumps(
            {
                "total": stats.total,
                "background_kept": stats.background_kept,
                "self_kept": stats.self_kept,
                "background_fraction": stats.background_fraction,
                "self_fraction": stats.self_fraction,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    (out / "timings.json").write_text(
        json.dumps(stage_totals, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    _write_augmented_dataset(out, dataset, images, bank, outcomes)

    failed = sum(1 for o in outcomes if not o.ok)
    return RunSummary(
        total=len(outcomes),
        failed=failed,
        background_kept=stats.background_kept,
        self_kept=stats.self_kept,
        output_dir=str(out),
    )


def _write_pair(pairs_dir: Path, outcome: EntryOutcome) -> None:
    pair = outcome.pair
    rid = outcome.region_id
    save_png(pair.self_styled, pairs_dir / f"{rid}.self.png")
    save_png(pair.background_styled, pairs_dir / f"{rid}.background.png")
    meta = {
        "region_id": rid,
        "background_image_id": outcome.background_image_id,
        "candidate_id": pair.candidate_id,
        "reference_id": pair.reference_id,
        "seed": pair.seed,
        "bbox": list(pair.region.bbox),
        "variants": {
            "self_style": f"{rid}.self.png",
            "background_style": f"{rid}.background.png",
        },
    }
    (pairs_dir / f"{rid}.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _find_target_annotation(dataset: Dataset, outcome: EntryOutcome) -> Annotation | None:
    region = outcome.pair.region
    for ann in dataset.annotations:
        if (
            ann.image_id == outcome.background_image_id
            and tuple(ann.bbox) == tuple(region.bbox)
            and ann.category == region.orig_category
        ):
            return ann
    return None


def _write_augmented_dataset(
    out: Path,
    dataset: Dataset,
    images: dict,
    bank: CellBank,
    outcomes: list[EntryOutcome],
) -> None:
    ds_dir = out / "dataset"
    (ds_dir / "images").mkdir(parents=True, exist_ok=True)
    (ds_dir / "synthetic").mkdir(parents=True, exist_ok=True)

    new_images: list[ImageInfo] = []
    new_annotations: list[Annotation] = []
    for info in dataset.images:
        image = images.get(info.id)
        if image is None:
            image = dataio.load_image(dataset, info.id)
        rel = f"images/{info.id}.png"
        save_png(image, ds_dir / rel)
        new_images.append(ImageInfo(id=info.id, path=rel, width=info.width, height=info.height))
    for ann in dataset.annotations:
        new_annotations.append(
            Annotation(
                image_id=ann.image_id,
                bbox=tuple(ann.bbox),
                category=ann.category,
                cell_type=ann.cell_type,
                area=ann.area,
                mask=ann.mask,
            )
        )

    for outcome in outcomes:
        if not outcome.ok:
            continue
        sid = f"{SYNTHETIC_PREFIX}{outcome.region_id}"
        kept = outcome.pair.variants[outcome.filtered.kept_variant]
        rel = f"synthetic/{sid}.png"
        save_png(kept, ds_dir / rel)
        h_img, w_img = kept.shape[:2]
        new_images.append(ImageInfo(id=sid, path=rel, width=w_img, height=h_img))

        target = _find_target_annotation(dataset, outcome)
        for ann in dataset.annotations:
            if ann.image_id != outcome.background_image_id or ann is target:
                continue
            new_annotations.append(
                Annotation(
                    image_id=sid,
                    bbox=tuple(ann.bbox),
                    category=ann.category,
                    cell_type=ann.cell_type,
                    area=ann.area,
                    mask=ann.mask,
                )
            )
        candidate = bank.record(outcome.pair.candidate_id)
        x, y, w, h = outcome.pair.region.bbox
        cell_mask = resize_mask(candidate.mask, (w, h))
        full = np.zeros((h_img, w_img), dtype=np.uint8)
        full[y : y + h, x : x + w] = cell_mask
        new_annotations.append(
            Annotation(
                image_id=sid,
                bbox=tuple(outcome.pair.region.bbox),
                category=candidate.category,
                cell_type=candidate.cell_type,
                area=max(1, int(mask_on(cell_mask).sum())),
                mask={"rle": dataio.mask_to_rle(full)},
            )
        )

    augmented = Dataset(
        images=new_images,
        annotations=new_annotations,
        categories=list(dataset.categories),
        base_dir=str(ds_dir),
    )
    dataio.export_dataset(augmented, dataio.CANONICAL_JSON, ds_dir / "dataset.json")


# --- re-filtration ------------------------------------------------------------

def run_filter(config: RunConfig) -> dict:
    out = Path(config.output_dir)
    plan_path = out / "plan.json"
    if not plan_path.exists():
        raise MissingRunError(f"{plan_path}: no plan; run augment first")
    plan = dataio.load_plan(plan_path)
    backends = build_backends(config)
    results: list[FilteredResult] = []
    for meta_path in sorted((out / "pairs").glob("*.json")):
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        rid = meta["region_id"]
        index = int(rid[1:6])
        pair = CompositionPair(
            region_id=rid,
            region=plan.entries[index].region,
            candidate_id=meta["candidate_id"],
            reference_id=meta["reference_id"],
            seed=meta["seed"],
            variants={
                "self_style": load_png(out / "pairs" / meta["variants"]["self_style"]),
                "background_style": load_png(
                    out / "pairs" / meta["variants"]["background_style"]
                ),
            },
        )
        results.append(
            filter_pair(
                pair,
                backends.judge,
                seed=substream_seed(config.seed, f"shuffle/{rid}"),
                template_id=config.prompt_template,
                on_unparseable=config.on_unparseable,
            )
        )
    write_results_jsonl(results, out / "filtration.jsonl")
    stats = aggregate_stats(results)
    return {
        "total": stats.total,
        "background_kept": stats.background_kept,
        "self_kept": stats.self_kept,
    }


# --- evaluation ---------------------------------------------------------------

def run_eval(config: RunConfig) -> dict:
    out = Path(config.output_dir)
    ds_path = out / "dataset" / "dataset.json"
    if not ds_path.exists():
        raise MissingRunError(f"{ds_path}: no augmented dataset; run augment first")
    augmented = dataio.import_dataset(ds_path, dataio.CANONICAL_JSON)
    backends = build_backends(config)
    bank = load_bank(config.bank_dir)

    real_ids = [i.id for i in augmented.images if not i.id.startswith(SYNTHETIC_PREFIX)]
    synth_ids = [i.id for i in augmented.images if i.id.startswith(SYNTHETIC_PREFIX)]
    cache = {i: dataio.load_image(augmented, i) for i in real_ids + synth_ids}

    def global_feature(image_id: str):
        return list(backends.embedding.embed(cache[image_id], None).global_vec)

    frechet = None
    if len(real_ids) >= 2 and len(synth_ids) >= 2:
        frechet = frechet_from_features(
            [global_feature(i) for i in real_ids],
            [global_feature(i) for i in synth_ids],
        )

    fidelity = None
    results = (
        read_results_jsonl(out / "filtration.jsonl")
        if (out / "filtration.jsonl").exists()
        else []
    )
    kept_vecs, bank_vecs = [], []
    for result in results:
        meta_path = out / "pairs" / f"{result.region_id}.json"
        if not meta_path.exists():
            continue
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        candidate = bank.record(meta["candidate_id"])
        if candidate.embedding is None:
            continue
        sid = f"{SYNTHETIC_PREFIX}{result.region_id}"
        if sid not in cache:
            continue
        x, y, w, h = meta["bbox"]
        crop = cache[sid][y : y + h, x : x + w]
        view, aligned_mask = masked_cell_view(crop, resize_mask(candidate.mask, (w, h)))
        kept_vecs.append(list(backends.embedding.embed(view, aligned_mask).global_vec))
        bank_vecs.append(list(candidate.embedding))
    if kept_vecs:
        fidelity = fidelity_score(kept_vecs, bank_vecs)

    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    descriptors = []
    rows_meta = []
    synth_category = {}
    for ann in augmented.annotations:
        if ann.image_id.startswith(SYNTHETIC_PREFIX) and ann.mask and "rle" in ann.mask:
            synth_category[ann.image_id] = ann.category
    for image_id in real_ids + synth_ids:
        descriptor = color_histogram(cache[image_id])
        descriptors.append(descriptor.values)
        split = "synthetic" if image_id.startswith(SYNTHETIC_PREFIX) else "real"
        rows_meta.append((image_id, split, synth_category.get(image_id, "")))
    projection = None
    if len(descriptors) >= 3:
        projection = style_projection(descriptors)
        write_points_csv(
            eval_dir / "style_points.csv",
            ["id", "x", "y", "split", "category"],
            [
                (meta[0], f"{pt[0]:.9f}", f"{pt[1]:.9f}", meta[1], meta[2])
                for meta, pt in zip(rows_meta, projection.points)
            ],
        )
        write_points_csv(
            eval_dir / "descriptors.csv",
            ["id"] + [f"v{k}" for k in range(len(descriptors[0]))],
            [
                [meta[0]] + [f"{v:.9f}" for v in vec]
                for meta, vec in zip(rows_meta, descriptors)
            ],
        )

    counts: dict[str, int] = {c: 0 for c in augmented.categories}
    for ann in augmented.annotations:
        counts[ann.category] = counts.get(ann.category, 0) + 1
    tails = tail_stats(counts, threshold=config.tail_threshold)

    stats_path = out / "filtration_stats.json"
    filtration = (
        json.loads(stats_path.read_text(encoding="utf-8")) if stats_path.exists() else None
    )
    report = {
        "frechet": frechet,
        "fidelity": fidelity,
        "images": {"real": len(real_ids), "synthetic": len(synth_ids)},
        "category_counts": counts,
        "tail_threshold": tails.threshold,
        "tail_categories": tails.tail,
        "filtration": filtration,
    }
    (eval_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return report


def run_report(config: RunConfig) -> str:
    out = Path(config.output_dir)
    report_path = out / "eval" / "report.json"
    if not report_path.exists():
        raise MissingRunError(f"{report_path}: no evaluation report; run eval first")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    lines = [f"run: {out}"]
    images = report.get("images", {})
    lines.append(
        f"images: {images.get('real', 0)} real + {images.get('synthetic', 0)} synthetic"
    )
    if report.get("frechet") is not None:
        lines.append(f"frechet distance: {report['frechet']:.4f}")
    if report.get("fidelity") is not None:
        lines.append(f"identity fidelity: {report['fidelity']:.2f}")
    filtration = report.get("filtration")
    if filtration:
        lines.append(
            "filtration: "
            f"{filtration['background_kept']}/{filtration['total']} background_style, "
            f"{filtration['self_kept']}/{filtration['total']} self_style"
        )
    lines.append(
        f"tail (<{report['tail_threshold']}): {', '.join(report['tail_categories']) or 'none'}"
    )
    return "\n".join(lines)
