"""FastAPI application implementing the wire protocol.

The checkpoint loads on a background thread after the server starts
accepting connections; until it is ready every endpoint answers 503.
Malformed bodies are 400, structurally valid ids outside the vocabulary are
422, matching the protocol's error contract.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from typing import Callable

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, StrictBool, StrictInt

from .config import BridgeConfig
from .model import ModelAdapter

META_PATH = "/v1/meta"
LOGPROBS_PATH = "/v1/logprobs"
EMBEDDINGS_PATH = "/v1/embeddings"


class LogprobsRequest(BaseModel):
    context: list[StrictInt]
    prefix: list[StrictInt]
    conditioned: StrictBool = True


class EmbeddingsRequest(BaseModel):
    ids: list[StrictInt]


class _State:
    def __init__(self):
        self.adapter: ModelAdapter | None = None
        self.error: str | None = None


def create_app(
    cfg: BridgeConfig, loader: Callable[[], ModelAdapter] | None = None
) -> FastAPI:
    """Build the application; `loader` is swappable for tests."""
    state = _State()
    load_adapter = loader if loader is not None else (lambda: ModelAdapter(cfg))

    def load():
        try:
            state.adapter = load_adapter()
        except Exception as exc:
            state.error = str(exc)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        thread = threading.Thread(target=load, daemon=True)
        thread.start()
        yield

    app = FastAPI(lifespan=lifespan, docs_url=None, redoc_url=None, openapi_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:3])})

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc.detail)})

    def ready() -> ModelAdapter:
        if state.adapter is None:
            detail = "model is loading" if state.error is None else f"model load failed: {state.error}"
            raise HTTPException(status_code=503, detail=detail)
        return state.adapter

    def check_range(name: str, ids: list[int], size: int) -> None:
        if any(i < 0 or i >= size for i in ids):
            raise HTTPException(
                status_code=422, detail=f"field {name!r} contains ids outside [0, {size})"
            )

    @app.get(META_PATH)
    async def meta():
        return ready().meta()

    @app.post(LOGPROBS_PATH)
    async def logprobs(body: LogprobsRequest):
        adapter = ready()
        check_range("context", body.context, adapter.vocab_size)
        check_range("prefix", body.prefix, adapter.vocab_size)
        return {"logprobs": adapter.logprobs(body.context, body.prefix, body.conditioned)}

    @app.post(EMBEDDINGS_PATH)
    async def embeddings(body: EmbeddingsRequest):
        adapter = ready()
        check_range("ids", body.ids, adapter.vocab_size)
        return {"vectors": adapter.embeddings(body.ids)}

    return app
