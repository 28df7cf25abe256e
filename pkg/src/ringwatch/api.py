"""HTTP surface for the detection service, consumed by the proctor UI.

Endpoints (all JSON; errors rendered as {"code", "message"}):
    POST /v1/sessions                    enroll a v1 session document
    GET  /v1/queue?limit=K               pending flags, most suspicious first
    GET  /v1/sessions/{id}               gallery metadata for one session
    GET  /v1/sessions/{id}/related?top_k ranked cross-user candidates
    POST /v1/flags/{id}/review           record a proctor verdict
    GET  /v1/health                      liveness + model info

Auth is a deployment concern; a static X-Proctor-Token header check is
the stub when a token is configured.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ringwatch import __version__
from ringwatch.errors import (
    AlreadyReviewed,
    DuplicateSessionId,
    MalformedDocument,
    ModelNotLoaded,
    NegativeTimestamp,
    RingwatchError,
    UnknownEventKind,
    UnknownFlag,
    UnknownSession,
    UnusableSession,
)
from ringwatch.service import DetectorService
from ringwatch.session import parse_session

_STATUS_BY_ERROR = [
    (DuplicateSessionId, 409),
    (AlreadyReviewed, 409),
    (UnusableSession, 409),
    (UnknownSession, 404),
    (UnknownFlag, 404),
    (ModelNotLoaded, 503),
    (MalformedDocument, 400),
    (NegativeTimestamp, 400),
    (UnknownEventKind, 400),
]


def _error_response(exc: Exception) -> JSONResponse:
    for klass, status in _STATUS_BY_ERROR:
        if isinstance(exc, klass):
            return JSONResponse(status_code=status,
                                content={"code": _snake(type(exc).__name__),
                                         "message": str(exc)})
    if isinstance(exc, ValueError):
        return JSONResponse(status_code=400,
                            content={"code": "bad_request", "message": str(exc)})
    return JSONResponse(status_code=500,
                        content={"code": "internal_error", "message": str(exc)})


def _snake(name: str) -> str:
    out = []
    for ch in name:
        if ch.isupper() and out:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def create_app(service: DetectorService, token: str | None = None,
               ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ringwatch", version=__version__)

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if token and request.url.path.startswith("/v1/"):
            if request.headers.get("x-proctor-token") != token:
                return JSONResponse(status_code=401,
                                    content={"code": "unauthorized",
                                             "message": "missing or bad token"})
        return await call_next(request)

    @app.exception_handler(RingwatchError)
    async def ringwatch_error(_request: Request, exc: RingwatchError):
        return _error_response(exc)

    @app.exception_handler(ValueError)
    async def value_error(_request: Request, exc: ValueError):
        return _error_response(exc)

    @app.post("/v1/sessions", status_code=201)
    async def enroll(request: Request):
        body = await request.body()
        record = parse_session(body)
        result = service.enroll_session(record)
        payload = {"session_id": result.session_id, "flagged": result.flag is not None,
                   "usable": result.usable}
        if result.note:
            payload["note"] = result.note
        if result.flag is not None:
            payload["flag"] = result.flag.to_dict()
        return payload

    @app.get("/v1/queue")
    async def queue(limit: int = 50):
        flags = service.pending_queue(limit=limit)
        return {"flags": [f.to_dict() for f in flags],
                "pending_total": len(service.pending_queue())}

    @app.get("/v1/sessions/{session_id}")
    async def session_detail(session_id: str):
        entry = service.get_entry(session_id)
        payload = entry.to_dict()
        del payload["embedding"]  # internal; never exposed over the wire
        flag = service.find_flag(session_id)
        payload["flag"] = flag.to_dict() if flag is not None else None
        return payload

    @app.get("/v1/sessions/{session_id}/related")
    async def related(session_id: str, top_k: int = 8):
        candidates = service.find_related(session_id, top_k=top_k)
        return {"candidates": [c.to_dict() for c in candidates]}

    @app.post("/v1/flags/{session_id}/review")
    async def review(session_id: str, request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "verdict" not in body:
            raise ValueError("body must be {verdict, note?}")
        flag = service.record_review(session_id, body["verdict"],
                                     body.get("note", ""))
        return flag.to_dict()

    @app.get("/v1/health")
    async def health():
        model = service.model
        return {
            "status": "ok",
            "model_version": (f"rwnet1/{model.config.variant}" if model else None),
            "threshold": service.threshold,
            "gallery_size": service.gallery_size,
        }

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
