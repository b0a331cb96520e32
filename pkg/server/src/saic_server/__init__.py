"""Inference server speaking the /v1 segmentation, embedding, composition, and judging protocol."""

from .adapters import ModelLoadError, build_adapters
from .app import create_app, serve
from .config import ConfigError, ServerConfig, config_from_dict, load_config
from .wire import WireError

__all__ = [
    "ConfigError",
    "ModelLoadError",
    "ServerConfig",
    "WireError",
    "build_adapters",
    "config_from_dict",
    "create_app",
    "load_config",
    "serve",
]
