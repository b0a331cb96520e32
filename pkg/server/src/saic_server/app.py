"""HTTP app exposing the four inference endpoints.

Request bodies are taken as raw JSON objects and validated by hand so
every malformed payload maps to a 400 ``{"error": ...}`` envelope, the
shape remote clients expect.  A middleware gates /v1/* behind model
readiness (503) and the optional bearer token (401); adapter work runs
under a semaphore so at most ``max_concurrent`` requests touch the
models at once.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .adapters import build_adapters
from .config import ServerConfig
from .wire import WireError, decode_png_b64, encode_png_b64

VARIANT_TAGS = ("self_style", "background_style")


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _image_field(payload: dict, key: str) -> np.ndarray:
    if key not in payload:
        raise WireError(f"missing field {key!r}")
    return decode_png_b64(payload[key], key)


def _mask_field(payload: dict, key: str) -> np.ndarray:
    array = _image_field(payload, key)
    # masks travel as mode-L PNGs; collapse anything wider to one plane
    return array if array.ndim == 2 else array[:, :, 0]


def _int_field(payload: dict, key: str, minimum: int | None = None) -> int:
    value = payload.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise WireError(f"{key!r} must be an integer")
    if minimum is not None and value < minimum:
        raise WireError(f"{key!r} must be >= {minimum}")
    return value


def _tokens_field(payload: dict, key: str) -> list[np.ndarray] | None:
    value = payload.get(key)
    if value is None:
        return None
    if not isinstance(value, list):
        raise WireError(f"{key!r} must be null or a list of vectors")
    tokens = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or not row:
            raise WireError(f"{key}[{i}] must be a non-empty list of numbers")
        try:
            tokens.append(np.asarray(row, dtype=np.float64))
        except (TypeError, ValueError) as exc:
            raise WireError(f"{key}[{i}]: non-numeric entries") from exc
    return tokens


def _vector_list(vectors) -> list[list[float]]:
    return [[float(v) for v in np.asarray(vec).ravel()] for vec in vectors]


def create_app(config: ServerConfig) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.adapters = build_adapters(config)
        app.state.ready = True
        yield
        app.state.ready = False

    app = FastAPI(title="saic-server", lifespan=lifespan)
    app.state.ready = False
    app.state.config = config
    gate = threading.Semaphore(config.max_concurrent)

    @app.middleware("http")
    async def _gate_v1(request: Request, call_next):
        if request.url.path.startswith("/v1/"):
            if not getattr(request.app.state, "ready", False):
                return _error(503, "models are still loading")
            if config.token is not None:
                supplied = request.headers.get("authorization")
                if supplied != f"Bearer {config.token}":
                    return _error(401, "missing or invalid bearer token")
        return await call_next(request)

    @app.exception_handler(RequestValidationError)
    async def _on_validation(request: Request, exc: RequestValidationError):
        return _error(400, f"malformed request body: {exc.errors()[:1]}")

    @app.exception_handler(WireError)
    async def _on_wire(request: Request, exc: WireError):
        return _error(400, str(exc))

    @app.exception_handler(ValueError)
    async def _on_value(request: Request, exc: ValueError):
        return _error(400, str(exc))

    @app.exception_handler(StarletteHTTPException)
    async def _on_http(request: Request, exc: StarletteHTTPException):
        return _error(exc.status_code, str(exc.detail))

    @app.get("/healthz")
    def healthz():
        if getattr(app.state, "ready", False):
            return {"status": "ok"}
        return _error(503, "models are still loading")

    @app.post("/v1/segment")
    def segment(payload: dict):
        image = _image_field(payload, "image")
        with gate:
            mask = app.state.adapters["segmentation"].segment(image, payload.get("bbox"))
        return {"mask": encode_png_b64(np.asarray(mask, dtype=np.uint8))}

    @app.post("/v1/embed")
    def embed(payload: dict):
        image = _image_field(payload, "image")
        mask = None if payload.get("mask") is None else _mask_field(payload, "mask")
        if mask is not None and mask.shape != image.shape[:2]:
            raise WireError(f"mask {mask.shape} does not match image {image.shape[:2]}")
        dim = _int_field(payload, "dim", minimum=1)
        with gate:
            global_vec, tokens = app.state.adapters["embedding"].embed(image, mask, dim)
        return {
            "global": [float(v) for v in np.asarray(global_vec).ravel()],
            "tokens": _vector_list(tokens),
        }

    @app.post("/v1/compose")
    def compose(payload: dict):
        background = _image_field(payload, "background")
        conditioning = _image_field(payload, "conditioning")
        shape_mask = _mask_field(payload, "shape_mask")
        id_tokens = _tokens_field(payload, "id_tokens")
        seed = _int_field(payload, "seed", minimum=0)
        variant = payload.get("variant")
        if variant not in VARIANT_TAGS:
            raise WireError(f"'variant' must be one of {list(VARIANT_TAGS)}")
        with gate:
            out = app.state.adapters["generation"].generate(
                background,
                conditioning,
                shape_mask,
                payload.get("bbox"),
                id_tokens,
                seed,
                variant,
            )
        return {"image": encode_png_b64(np.asarray(out, dtype=np.uint8))}

    @app.post("/v1/judge")
    def judge(payload: dict):
        image_a = _image_field(payload, "image_a")
        image_b = _image_field(payload, "image_b")
        prompt = payload.get("prompt")
        if not isinstance(prompt, str) or not prompt:
            raise WireError("'prompt' must be a non-empty string")
        with gate:
            text = app.state.adapters["judge"].judge(image_a, image_b, prompt)
        return {"text": text}

    return app


def serve(config: ServerConfig) -> None:
    """Load models and serve until interrupted; raises if weights are missing."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
