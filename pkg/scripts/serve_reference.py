#!/usr/bin/env python3
"""Serve the deterministic reference backends over the /v1/* JSON protocol.

Useful for exercising the live-backend code path without any neural
services: point a run config's backend_url here and set backend: live.

    python scripts/serve_reference.py --port 8008 --embed-dim 768
"""

import argparse
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from saic.backends.conformance import post_via_backends
from saic.backends.reference import reference_backends


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--embed-dim", type=int, default=768)
    parser.add_argument("--token", default=None, help="require this bearer token when set")
    args = parser.parse_args()

    backends = reference_backends(embed_dim=args.embed_dim)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802 (http.server API)
            if args.token is not None:
                expected = f"Bearer {args.token}"
                if self.headers.get("Authorization") != expected:
                    self._reply(401, {"error": "missing or invalid bearer token"})
                    return
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
            except (ValueError, UnicodeDecodeError):
                self._reply(400, {"error": "request body is not valid JSON"})
                return
            status, body = post_via_backends(self.path, payload, backends)
            self._reply(status, body)

        def _reply(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *log_args) -> None:
            pass  # quiet; conformance runs hammer the endpoints

    server = ThreadingHTTPServer((args.host, args.port), Handler)
    print(f"reference backends on http://{args.host}:{args.port} (embed_dim={args.embed_dim})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
