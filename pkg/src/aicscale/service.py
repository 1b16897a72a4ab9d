"""HTTP service exposing the response store to study clients.

Endpoints (JSON bodies unless noted):

* ``POST /api/enroll`` ``{"method": "btc"|"ptc"}`` -> participant id + bearer token
* ``GET  /api/study`` -> study metadata (methods, batch size, coverage target)
* ``POST /api/batch/next`` (auth) -> next batch with fully resolved questions
* ``GET  /api/triplet/{triplet_id}/assets`` (auth) -> image URLs + method parameters
* ``POST /api/response`` (auth) -> ``{"accepted": true, "duplicate": false}``
* ``GET  /api/export?method=`` (admin token when configured) -> CSV response table

Stimulus files are served under ``/assets/`` relative to the manifest
directory. Participants authenticate with the bearer token issued at
enrollment.
"""

from __future__ import annotations

import time

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .catalog import StudyManifest
from .design import Method, Side, parse_triplet_id
from .store import (
    Choice,
    DuplicateConflict,
    LimitReached,
    Response,
    ResponseStore,
    StoreError,
    StudyComplete,
    render_responses_csv,
)

BTC_ZOOM_FACTOR = 2.0
BTC_FLICKER_HZ = 10.0


class EnrollRequest(BaseModel):
    method: str


class ResponseBody(BaseModel):
    triplet_id: str
    batch_id: str
    choice: str
    response_time_ms: float
    toggle_count: int | None = None
    submitted_at: float | None = None


def _asset_url(manifest: StudyManifest, side: Side, source_id: str) -> str:
    if side.is_source:
        return "/assets/" + manifest.source(source_id).file_path
    stim = manifest.stimulus(source_id, side.codec_id, side.level)
    return "/assets/" + stim.file_path


def _method_params(method: Method) -> dict:
    if method == Method.BTC:
        return {"zoom_factor": BTC_ZOOM_FACTOR, "flicker_hz": BTC_FLICKER_HZ,
                "toggle_required": False}
    return {"zoom_factor": 1.0, "flicker_hz": 0.0, "toggle_required": True}


def create_app(store: ResponseStore, manifest: StudyManifest,
               admin_token: str | None = None) -> FastAPI:
    app = FastAPI(title="triplet study service")
    # the browser client is typically served from a different origin than
    # the API; auth is a bearer header, not cookies, so "*" is safe here
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def participant(authorization: str = Header(default="")):
        if not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        try:
            return store.participant_by_token(authorization.removeprefix("Bearer "))
        except StoreError:
            raise HTTPException(401, "unknown token") from None

    @app.get("/api/study")
    def study_meta():
        return {
            "methods": [m.value for m in store.designs],
            "target_coverage": store.target_coverage,
            "max_batches_per_participant": store.max_batches_per_participant,
            "batch_sizes": {
                m.value: d.batch_size for m, d in store.designs.items()
            },
        }

    @app.post("/api/enroll")
    def enroll(body: EnrollRequest):
        try:
            method = Method(body.method)
        except ValueError:
            raise HTTPException(422, f"unknown method {body.method!r}") from None
        try:
            p = store.enroll(method)
        except StoreError as exc:
            raise HTTPException(409, str(exc)) from None
        return {
            "participant_id": p.id,
            "token": p.token,
            "method": p.method.value,
            "max_batches": store.max_batches_per_participant,
        }

    def _question_payload(triplet_id: str) -> dict:
        t = parse_triplet_id(triplet_id)
        return {
            "triplet_id": triplet_id,
            "source_id": t.source_id,
            "kind": t.kind,
            "left_url": _asset_url(manifest, t.left, t.source_id),
            "pivot_url": _asset_url(manifest, Side.source(), t.source_id),
            "right_url": _asset_url(manifest, t.right, t.source_id),
            **_method_params(t.method),
        }

    @app.post("/api/batch/next")
    def next_batch(p=Depends(participant)):
        try:
            batch = store.next_batch(p.id)
        except LimitReached as exc:
            raise HTTPException(403, str(exc)) from None
        except StudyComplete as exc:
            raise HTTPException(409, str(exc)) from None
        return {
            "batch_id": batch.id,
            "method": batch.method.value,
            "questions": [_question_payload(tid) for tid in batch.questions],
        }

    @app.get("/api/triplet/{triplet_id}/assets")
    def triplet_assets(triplet_id: str, p=Depends(participant)):
        try:
            return _question_payload(triplet_id)
        except (KeyError, ValueError) as exc:
            raise HTTPException(404, f"unknown triplet: {exc}") from None

    @app.post("/api/response")
    def post_response(body: ResponseBody, p=Depends(participant)):
        try:
            choice = Choice(body.choice)
        except ValueError:
            raise HTTPException(422, f"unknown choice {body.choice!r}") from None
        response = Response(
            triplet_id=body.triplet_id,
            batch_id=body.batch_id,
            participant_id=p.id,
            choice=choice,
            response_time_ms=body.response_time_ms,
            toggle_count=body.toggle_count,
            submitted_at=body.submitted_at
            if body.submitted_at is not None else time.time(),
        )
        try:
            ack = store.record(response)
        except DuplicateConflict as exc:
            raise HTTPException(409, str(exc)) from None
        except StoreError as exc:
            raise HTTPException(422, str(exc)) from None
        return {"accepted": ack.accepted, "duplicate": ack.duplicate}

    @app.get("/api/export", response_class=PlainTextResponse)
    def export(method: str | None = Query(default=None),
               token: str | None = Query(default=None)):
        if admin_token is not None and token != admin_token:
            raise HTTPException(401, "admin token required")
        method_filter = Method(method) if method else None
        return render_responses_csv(store.export_rows(method_filter))

    base_dir = manifest.base_dir if str(manifest.base_dir) else "."
    app.mount("/assets", StaticFiles(directory=base_dir), name="assets")
    return app
