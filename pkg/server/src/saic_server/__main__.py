"""Command line entry: ``saic-server --config server.yaml``."""

from __future__ import annotations

import argparse

from .app import serve
from .config import ServerConfig, load_config


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="saic-server",
        description="Serve the /v1 segment, embed, compose, and judge endpoints.",
    )
    parser.add_argument("--config", help="YAML or JSON server config; defaults used if omitted")
    parser.add_argument("--host", help="bind address override")
    parser.add_argument("--port", type=int, help="port override")
    args = parser.parse_args(argv)

    config = load_config(args.config) if args.config else ServerConfig()
    if args.host is not None or args.port is not None:
        from dataclasses import replace

        config = replace(
            config,
            host=args.host if args.host is not None else config.host,
            port=args.port if args.port is not None else config.port,
        )
    serve(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
