"""HTTP server: /detect, /lpips, and /health over the shared JSON protocol.

Endpoints are plain (sync) handlers, so the framework runs them in its
threadpool; per-backend locks serialize inference while separate models
still run concurrently. Error responses always carry {"error": message}.
"""
from __future__ import annotations

import logging

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .backends import ModelUnavailable
from .registry import ModelRegistry, UnknownModel, default_registry
from .wire import ProtocolError, decode_image, detections_payload, read_confidence

__all__ = ["create_app"]

log = logging.getLogger(__name__)


def create_app(registry: ModelRegistry | None = None) -> FastAPI:
    reg = registry if registry is not None else default_registry()
    app = FastAPI(title="pydetect", docs_url=None, redoc_url=None)

    @app.exception_handler(ProtocolError)
    async def _protocol_error(_: Request, exc: ProtocolError):
        return JSONResponse({"error": exc.message}, status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _body_error(_: Request, exc: RequestValidationError):
        return JSONResponse({"error": "malformed request body"}, status_code=400)

    @app.get("/health")
    def health() -> dict:
        return reg.health()

    @app.post("/detect")
    def detect(payload: dict = Body(...), model: str | None = None):
        image = decode_image(payload, "image_png")
        conf = read_confidence(payload)
        try:
            backend = reg.resolve(model)
        except UnknownModel as exc:
            raise ProtocolError(404, str(exc)) from exc
        try:
            found = backend.infer(image, conf)
        except ModelUnavailable as exc:
            raise ProtocolError(503, f"model {backend.name!r} unavailable: {exc}") from exc
        return JSONResponse(detections_payload(backend.name, found))

    @app.post("/lpips")
    def lpips_distance(payload: dict = Body(...)):
        a = decode_image(payload, "image_a_png")
        b = decode_image(payload, "image_b_png")
        if a.shape != b.shape:
            raise ProtocolError(
                400, f"size mismatch: {a.shape[:2]} vs {b.shape[:2]}"
            )
        try:
            value = reg.metric().distance(a, b)
        except ModelUnavailable as exc:
            raise ProtocolError(503, f"lpips unavailable: {exc}") from exc
        return JSONResponse({"lpips": float(value)})

    return app
