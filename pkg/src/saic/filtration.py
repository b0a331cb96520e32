"""Judge-based selection between the two styled variants of a region.

Each composed pair is shown to a vision-language judge as images A and
B.  Presentation order is shuffled per region (seeded coin) so a
position-biased judge cannot systematically favor one variant; the
verdict letter is mapped back through the order before anything is
recorded.  Unparseable verdicts either fall back to the
background_style variant or raise, by configuration.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources

from .backends.types import BACKGROUND_STYLE, SELF_STYLE
from .composer import CompositionPair
from .errors import UnknownTemplateError, UnparseableVerdictError

SELF_FIRST = "self_first"
BACKGROUND_FIRST = "background_first"
PRESENTATION_ORDERS = (SELF_FIRST, BACKGROUND_FIRST)

DEFAULT_TEMPLATE = "default"


@dataclass
class FilteredResult:
    region_id: str
    kept_variant: str
    presentation_order: str
    rationale: str
    fallback: bool = False


@dataclass
class FiltrationStats:
    total: int
    background_kept: int
    self_kept: int

    @property
    def background_fraction(self) -> float:
        return self.background_kept / self.total if self.total else 0.0

    @property
    def self_fraction(self) -> float:
        return self.self_kept / self.total if self.total else 0.0


def load_prompt_registry() -> dict:
    with resources.files(__package__).joinpath("prompts.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def build_prompt(template_id: str = DEFAULT_TEMPLATE, context: dict | None = None) -> str:
    registry = load_prompt_registry()["templates"]
    if template_id not in registry:
        raise UnknownTemplateError(
            f"unknown prompt template {template_id!r}; have {sorted(registry)}"
        )
    try:
        return registry[template_id].format(**(context or {}))
    except (KeyError, IndexError) as exc:
        raise UnknownTemplateError(f"template {template_id!r} needs context key {exc}") from exc


def filter_pair(
    pair: CompositionPair,
    judge_backend,
    seed: int,
    template_id: str = DEFAULT_TEMPLATE,
    context: dict | None = None,
    order: str | None = None,
    on_unparseable: str = "fallback",
) -> FilteredResult:
    """Ask the judge which styled variant to keep.

    ``order`` forces a presentation order; left None it is drawn from
    the seed.  A judge whose verdict depends only on image content
    yields the same kept variant under both orders.
    """
    if order is None:
        order = PRESENTATION_ORDERS[random.Random(seed).randrange(2)]
    elif order not in PRESENTATION_ORDERS:
        raise ValueError(f"order must be one of {PRESENTATION_ORDERS}, got {order!r}")
    if order == SELF_FIRST:
        image_a, image_b = pair.self_styled, pair.background_styled
        by_letter = {"A": SELF_STYLE, "B": BACKGROUND_STYLE}
    else:
        image_a, image_b = pair.background_styled, pair.self_styled
        by_letter = {"A": BACKGROUND_STYLE, "B": SELF_STYLE}

    merged_context = {"category": pair.region.orig_category}
    merged_context.update(context or {})
    prompt = build_prompt(template_id, merged_context)
    try:
        verdict = judge_backend.judge(image_a, image_b, prompt)
    except UnparseableVerdictError as exc:
        if on_unparseable == "fallback":
            return FilteredResult(
                region_id=pair.region_id,
                kept_variant=BACKGROUND_STYLE,
                presentation_order=order,
                rationale=f"fallback: {exc}",
                fallback=True,
            )
        raise UnparseableVerdictError(f"region {pair.region_id!r}: {exc}") from exc
    return FilteredResult(
        region_id=pair.region_id,
        kept_variant=by_letter[verdict.choice],
        presentation_order=order,
        rationale=verdict.rationale,
        fallback=False,
    )


def aggregate_stats(results: list[FilteredResult]) -> FiltrationStats:
    background = sum(1 for r in results if r.kept_variant == BACKGROUND_STYLE)
    kept_self = sum(1 for r in results if r.kept_variant == SELF_STYLE)
    return FiltrationStats(total=len(results), background_kept=background, self_kept=kept_self)


def result_to_dict(result: FilteredResult) -> dict:
    return {
        "region_id": result.region_id,
        "kept_variant": result.kept_variant,
        "presentation_order": result.presentation_order,
        "rationale": result.rationale,
        "fallback": result.fallback,
    }


def result_from_dict(payload: dict) -> FilteredResult:
    return FilteredResult(
        region_id=payload["region_id"],
        kept_variant=payload["kept_variant"],
        presentation_order=payload["presentation_order"],
        rationale=payload["rationale"],
        fallback=bool(payload.get("fallback", False)),
    )


def write_results_jsonl(results: list[FilteredResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result_to_dict(result), sort_keys=True) + "\n")


def read_results_jsonl(path) -> list[FilteredResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(result_from_dict(json.loads(line)))
    return out
