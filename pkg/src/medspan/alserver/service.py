"""HTTP + JSON API for the annotation loop, versioned under /api/v1.

Endpoints (full payload schemas with examples in docs/api.md):

    POST /api/v1/sessions                     -> new session
    GET  /api/v1/sessions/{id}/next           -> document + suggestion | done
    POST /api/v1/sessions/{id}/decisions      -> stored ack (idempotent)
    POST /api/v1/projects/{id}/retrain        -> swap report | refusal
    GET  /api/v1/projects/{id}/stats          -> counters + pairwise IAA
    GET  /api/v1/projects/{id}/export?part=…  -> corpus file (ndjson)
    GET  /healthz                             -> liveness

Errors return {"error": {"code", "message"}}.  Authentication is a single
static bearer token when configured.  All writes serialize through the
store's lock; reads are unrestricted.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from medspan.alserver.store import ProjectStore, StoreError
from medspan.tagger.model import TrainConfig

_ERROR_STATUS = {
    "unknown_session": 404,
    "unknown_doc": 404,
    "unknown_project": 404,
    "not_leased": 409,
    "lease_expired": 409,
    "insufficient_new_data": 409,
    "missing_disposition": 422,
    "span_bounds": 422,
    "span_overlap": 422,
    "bad_label": 422,
    "bad_disposition": 422,
    "no_model": 409,
    "bad_request": 400,
}


class SessionRequest(BaseModel):
    annotator_id: str = Field(min_length=1)


class SpanPayload(BaseModel):
    start: int
    end: int
    label: str


class DispositionPayload(SpanPayload):
    disposition: str


class DecisionRequest(BaseModel):
    doc_id: str
    spans: list[SpanPayload] = Field(default_factory=list)
    dispositions: list[DispositionPayload] = Field(default_factory=list)
    annotator_id: Optional[str] = None


class RetrainRequest(BaseModel):
    epochs: int = 10
    min_new_decisions: int = 25
    regression_tolerance: float = 0.01
    seed: int = 0


def build_app(
    store_dir: str,
    model_path: Optional[str] = None,
    corpus_dir: Optional[str] = None,
    token: Optional[str] = None,
    seed: int = 0,
    store: Optional[ProjectStore] = None,
    static_dir: Optional[str] = None,
) -> FastAPI:
    """Assemble the FastAPI app around one project store."""
    if store is None:
        store = ProjectStore.open(store_dir, corpus_dir=corpus_dir, model_path=model_path)
    app = FastAPI(title="medspan annotation service", version="1")
    app.state.store = store
    # the browser client may be hosted on another origin; auth stays with
    # the bearer token, so a permissive CORS policy is safe here
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def check_token(authorization: Optional[str] = Header(default=None)) -> None:
        if token is None:
            return
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    @app.exception_handler(StoreError)
    async def store_error_handler(_request: Request, exc: StoreError):
        return JSONResponse(
            status_code=_ERROR_STATUS.get(exc.code, 400),
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "model_version": store.model.version if store.model else None}

    @app.post("/api/v1/sessions", dependencies=[Depends(check_token)])
    def create_session(body: SessionRequest) -> dict:
        session = store.create_session(body.annotator_id)
        return {
            "session_id": session.session_id,
            "annotator_id": session.annotator_id,
            "project_id": store.project_id,
        }

    @app.get("/api/v1/sessions/{session_id}/next", dependencies=[Depends(check_token)])
    def next_task(session_id: str) -> dict:
        result = store.next_task(session_id)
        if result is None:
            return {"done": True}
        document, suggestion = result
        return {
            "done": False,
            "document": document,
            "suggestion": suggestion.to_dict(),
        }

    @app.post(
        "/api/v1/sessions/{session_id}/decisions", dependencies=[Depends(check_token)]
    )
    def submit_decision(session_id: str, body: DecisionRequest) -> dict:
        return store.submit(session_id, body.model_dump(exclude_none=True))

    def _check_project(project_id: str) -> None:
        if project_id != store.project_id:
            raise StoreError("unknown_project", f"no project {project_id!r}")

    @app.post("/api/v1/projects/{project_id}/retrain", dependencies=[Depends(check_token)])
    def retrain(project_id: str, body: Optional[RetrainRequest] = None) -> dict:
        _check_project(project_id)
        body = body or RetrainRequest()
        config = TrainConfig(epochs=body.epochs, seed=body.seed)
        return store.retrain(
            config=config,
            min_new_decisions=body.min_new_decisions,
            regression_tolerance=body.regression_tolerance,
        )

    @app.get("/api/v1/projects/{project_id}/stats", dependencies=[Depends(check_token)])
    def stats(project_id: str) -> dict:
        _check_project(project_id)
        return store.stats()

    @app.get("/api/v1/projects/{project_id}/export", dependencies=[Depends(check_token)])
    def export(project_id: str, part: str = Query("documents")) -> PlainTextResponse:
        _check_project(project_id)
        if part not in ("documents", "annotations"):
            raise StoreError("bad_request", f"unknown export part {part!r}")
        docs, ann = store.export()
        return PlainTextResponse(
            docs if part == "documents" else ann, media_type="application/x-ndjson"
        )

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="webui")

    return app
