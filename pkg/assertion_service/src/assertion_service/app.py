"""HTTP surface: batch span classification plus a readiness probe.

POST /assert  {"text": ..., "entities": [[start, end], ...]}
              -> {"labels": [{"label": ..., "confidence": ...}, ...]}
GET  /healthz -> {"status": "ok", "model_id": ..., "weights_sha256": ...}

Schema violations return 400, oversized notes 413, and both endpoints
return 503 until the model finished loading. The label list always
aligns one-to-one with the request's entity list.
"""

from __future__ import annotations

import os
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from .backends import Backend, load_backend

ENV_PORT = "ASSERTION_PORT"
ENV_MAX_TEXT = "ASSERTION_MAX_TEXT"

DEFAULT_MAX_TEXT = 50_000


class AssertRequest(BaseModel):
    text: str
    entities: list[tuple[int, int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_spans(self):
        prev_end = -1
        for start, end in sorted(self.entities):
            if not (0 <= start <= end <= len(self.text)):
                raise ValueError(f"span ({start}, {end}) outside text bounds")
            if start < prev_end:
                raise ValueError("entity spans overlap")
            prev_end = end
        return self


class SpanLabel(BaseModel):
    label: str
    confidence: float


class AssertResponse(BaseModel):
    labels: list[SpanLabel]


def create_app(backend: Backend | None = None, defer_load: bool = False) -> FastAPI:
    """App factory; tests can inject a backend or keep the app not-ready."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.backend is None and not defer_load:
            app.state.backend = load_backend()
        yield

    app = FastAPI(title="assertion-service", lifespan=lifespan)
    app.state.backend = backend
    app.state.max_text = int(os.environ.get(ENV_MAX_TEXT, DEFAULT_MAX_TEXT))

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        detail = [{"loc": list(e.get("loc", ())), "msg": str(e.get("msg", "")),
                   "type": str(e.get("type", ""))} for e in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": detail})

    def not_ready():
        return JSONResponse(status_code=503,
                            content={"detail": "model is still loading"})

    @app.get("/healthz")
    async def healthz():
        backend = app.state.backend
        if backend is None:
            return not_ready()
        return {"status": "ok", "model_id": backend.model_id,
                "weights_sha256": backend.weights_sha256}

    @app.post("/assert", response_model=AssertResponse)
    async def assert_spans(payload: AssertRequest):
        backend = app.state.backend
        if backend is None:
            return not_ready()
        if len(payload.text) > app.state.max_text:
            return JSONResponse(
                status_code=413,
                content={"detail": f"text exceeds {app.state.max_text} characters"})
        labels = backend.classify(payload.text, [tuple(e) for e in payload.entities])
        return AssertResponse(labels=[
            SpanLabel(label=label, confidence=confidence)
            for label, confidence in labels
        ])

    return app


app = create_app()


def serve():
    """Console entry point; port and model path come from the environment."""
    import uvicorn

    uvicorn.run("assertion_service.app:app",
                host=os.environ.get("ASSERTION_HOST", "127.0.0.1"),
                port=int(os.environ.get(ENV_PORT, "8321")))
