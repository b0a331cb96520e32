"""Run configuration and deterministic seed derivation.

A run owns one master seed.  Every stochastic site draws from its own
named substream, seeded by hashing ``"{master}:{name}"``, so adding or
reordering stages never shifts the randomness seen by another stage.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ParseError, SchemaError

BACKEND_REFERENCE = "reference"
BACKEND_LIVE = "live"
BACKENDS = (BACKEND_REFERENCE, BACKEND_LIVE)

TOKEN_ENV_VAR = "SAIC_BACKEND_TOKEN"


def substream_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def region_run_id(index: int, background_image_id: str) -> str:
    return f"r{index:05d}_{background_image_id}"


@dataclass
class RunConfig:
    seed: int
    dataset_path: str
    dataset_format: str = "canonical_json"
    bank_dir: str = "bank"
    output_dir: str = "run"
    backend: str = BACKEND_REFERENCE
    backend_url: str = "http://127.0.0.1:8008"
    embed_dim: int = 768
    alpha: float = 0.1
    hf_method: str = "sobel"
    expand_ratio: float = 1.0
    targeting: str = "tail_weighted"
    tail_threshold: int = 500
    min_per_category: int = 68
    max_per_category: int = 90
    workers: int = 1
    prompt_template: str = "default"
    on_unparseable: str = "fallback"
    feather_radius: int = 2

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise SchemaError("seed: must be an integer (no implicit default)")
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaError(f"alpha: {self.alpha} outside [0, 1]")
        if self.backend not in BACKENDS:
            raise SchemaError(f"backend: {self.backend!r} not in {BACKENDS}")
        if self.workers < 1:
            raise SchemaError(f"workers: {self.workers} must be >= 1")
        if self.expand_ratio < 0:
            raise SchemaError(f"expand_ratio: {self.expand_ratio} must be >= 0")
        if self.hf_method not in ("sobel", "laplacian"):
            raise SchemaError(f"hf_method: {self.hf_method!r}")
        if self.targeting not in ("uniform", "tail_weighted"):
            raise SchemaError(f"targeting: {self.targeting!r}")
        if self.on_unparseable not in ("fallback", "raise"):
            raise SchemaError(f"on_unparseable: {self.on_unparseable!r}")
        if not 0 < self.min_per_category <= self.max_per_category:
            raise SchemaError(
                f"per-category bounds: 0 < {self.min_per_category} <= {self.max_per_category}"
            )
        if self.embed_dim < 1:
            raise SchemaError(f"embed_dim: {self.embed_dim} must be >= 1")
        if self.dataset_format not in ("canonical_json", "coco_json", "yolo_txt"):
            raise SchemaError(f"dataset_format: {self.dataset_format!r}")
        if self.tail_threshold < 1:
            raise SchemaError(f"tail_threshold: {self.tail_threshold} must be >= 1")


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if path.suffix in (".yaml", ".yml"):
        try:
            payload = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    else:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return config_from_dict(payload, source=str(path))


def config_from_dict(payload: dict, source: str = "<dict>") -> RunConfig:
    if not isinstance(payload, dict):
        raise SchemaError(f"{source}: config must be a mapping")
    unknown = sorted(set(payload) - _FIELD_NAMES)
    if unknown:
        raise SchemaError(f"{source}: unknown config keys {unknown}")
    if "seed" not in payload:
        raise SchemaError(f"{source}: seed is required; runs must pin their randomness")
    if "dataset_path" not in payload:
        raise SchemaError(f"{source}: dataset_path is required")
    return RunConfig(**payload)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def dump_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2) + "\n"
