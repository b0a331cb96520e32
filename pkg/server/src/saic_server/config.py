"""Server configuration.

Every endpoint names its model as ``family/variant``; the adapter
registry resolves the id at startup, so a typo fails the boot rather
than the first request.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ServerConfig:
    segmentation_model: str = "classical/otsu"
    embedding_model: str = "classical/histogram"
    generation_model: str = "classical/hfpaint"
    judge_model: str = "classical/seam"
    device: str = "cpu"
    max_concurrent: int = 4
    token: str | None = None
    host: str = "127.0.0.1"
    port: int = 8008

    def __post_init__(self) -> None:
        for name in ("segmentation_model", "embedding_model", "generation_model", "judge_model"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ConfigError(f"{name}: every endpoint needs a model id")
        if not isinstance(self.max_concurrent, int) or self.max_concurrent < 1:
            raise ConfigError(f"max_concurrent: {self.max_concurrent!r} must be a positive integer")
        if not (self.device == "cpu" or self.device.startswith("cuda")):
            raise ConfigError(f"device: {self.device!r} (expected cpu or cuda[:N])")
        if not 0 < self.port < 65536:
            raise ConfigError(f"port: {self.port}")


_FIELDS = {f.name for f in dataclasses.fields(ServerConfig)}


def config_from_dict(payload: dict, source: str = "<dict>") -> ServerConfig:
    if not isinstance(payload, dict):
        raise ConfigError(f"{source}: config must be a mapping")
    unknown = sorted(set(payload) - _FIELDS)
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {unknown}")
    return ServerConfig(**payload)


def load_config(path) -> ServerConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if path.suffix in (".yaml", ".yml"):
        try:
            payload = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return config_from_dict(payload, source=str(path))
