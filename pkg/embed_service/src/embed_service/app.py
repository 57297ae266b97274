"""FastAPI application exposing the embedding protocol.

Environment:
    EMBED_SERVICE_MODEL  encoder spec, default the pinned multilingual
                         checkpoint; ``hashing`` selects the offline backend
    EMBED_SERVICE_ADDR   listen address as host:port (default 127.0.0.1:8901)
"""

from __future__ import annotations

import math
import os

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .encoders import TextEncoder, create_encoder

MAX_TEXTS_PER_CALL = 64
MAX_TEXT_CHARS = 8192

DEFAULT_MODEL = "st:sentence-transformers/paraphrase-multilingual-mpnet-base-v2"
DEFAULT_ADDR = "127.0.0.1:8901"


class EmbedRequest(BaseModel):
    texts: list[str]


class EmbedResponse(BaseModel):
    model_id: str
    vectors: list[list[float]]


def create_app(encoder: TextEncoder | None = None) -> FastAPI:
    if encoder is None:
        encoder = create_encoder(os.environ.get("EMBED_SERVICE_MODEL", DEFAULT_MODEL))
    app = FastAPI(title="embed-service")
    app.state.encoder = encoder

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    def health():
        return {"model_id": encoder.model_id, "ready": encoder.ready}

    @app.post("/embed", response_model=EmbedResponse)
    def embed(request: EmbedRequest):
        if len(request.texts) > MAX_TEXTS_PER_CALL:
            return JSONResponse(
                status_code=400,
                content={"detail": f"at most {MAX_TEXTS_PER_CALL} texts per call"})
        for i, text in enumerate(request.texts):
            if len(text) > MAX_TEXT_CHARS:
                return JSONResponse(
                    status_code=400,
                    content={"detail": f"text {i} exceeds {MAX_TEXT_CHARS} characters"})
        if not encoder.ready:
            return JSONResponse(status_code=503,
                                content={"detail": "model is still loading"})
        vectors = encoder.encode(request.texts)
        if any(not math.isfinite(v) for vec in vectors for v in vec):
            return JSONResponse(status_code=500,
                                content={"detail": "encoder produced non-finite values"})
        return {"model_id": encoder.model_id, "vectors": vectors}

    return app


def main() -> None:
    import uvicorn

    host, _, port = os.environ.get("EMBED_SERVICE_ADDR", DEFAULT_ADDR).partition(":")
    uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port or 8901))


if __name__ == "__main__":
    main()
