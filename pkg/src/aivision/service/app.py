"""FastAPI application over the session layer.

The service is a thin adapter: request bodies validate, convert to core
types, and delegate; every number a client sees is computed by the core
modules. Binds loopback by default (single operator, local machine).
"""

from __future__ import annotations

import io
import json
import os
import queue

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .. import __version__
from ..cache import CacheConfigMismatch, CacheError
from ..session import (
    RunRejected,
    SessionError,
    SessionManager,
    SessionNotFound,
    SessionStateError,
    data_root,
)
from .schemas import (
    CountRequest,
    CreateSessionRequest,
    EvalRequest,
    MaskBody,
    ZonesBody,
)

SSE_POLL_SECONDS = 0.5


def create_app(manager: SessionManager | None = None) -> FastAPI:
    manager = manager or SessionManager(data_root())
    app = FastAPI(title="aivision", version=__version__)
    app.state.manager = manager

    def get_session(session_id: str):
        try:
            return manager.get(session_id)
        except SessionNotFound as e:
            raise HTTPException(status_code=404, detail=str(e)) from e

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(SessionError)
    async def session_error(request: Request, exc: SessionError):
        status = 409 if isinstance(exc, (RunRejected, SessionStateError)) else 400
        if isinstance(exc, SessionNotFound):
            status = 404
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.exception_handler(CacheError)
    async def cache_error(request: Request, exc: CacheError):
        status = 409 if isinstance(exc, CacheConfigMismatch) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/")
    def root():
        return {"service": "aivision", "version": __version__}

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        session = manager.create_session(
            dets_path=body.dets_path,
            source_path=body.source_path,
            adapter=body.adapter.to_spec() if body.adapter else None,
            params=body.tracker.to_params(),
            detector=body.detector.to_config(),
            gallery_enabled=body.gallery,
        )
        return {"session_id": session.session_id}

    @app.get("/api/sessions")
    def list_sessions():
        return {"sessions": manager.list_ids()}

    @app.get("/api/sessions/{session_id}")
    def session_state(session_id: str):
        return get_session(session_id).describe()

    @app.get("/api/sessions/{session_id}/frame/{index}")
    def frame(session_id: str, index: int):
        session = get_session(session_id)
        try:
            pixels = session.frame_image(index)
        except SessionStateError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        except IndexError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(pixels).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.put("/api/sessions/{session_id}/mask")
    def put_mask(session_id: str, body: MaskBody):
        session = get_session(session_id)
        session.set_mask([p.to_polygon() for p in body.root])
        return {"polygons": len(body.root)}

    @app.put("/api/sessions/{session_id}/zones")
    def put_zones(session_id: str, body: ZonesBody):
        session = get_session(session_id)
        zones = {}
        if body.finish_line is not None:
            zone = body.finish_line.to_zone()  # validates geometry
            zones["finish_line"] = zone.to_json()["finish_line"]
        if body.motion_vector is not None:
            spec = body.motion_vector.to_spec()
            zones["motion_vector"] = spec.to_json()["motion_vector"]
        session.set_zones(zones)
        return {"zones": sorted(zones)}

    @app.get("/api/sessions/{session_id}/zones")
    def get_zones(session_id: str):
        return get_session(session_id).zones

    @app.get("/api/sessions/{session_id}/mask")
    def get_mask(session_id: str):
        session = get_session(session_id)
        return {"polygons": [p.to_json() for p in session.mask_polygons]}

    @app.post("/api/sessions/{session_id}/run", status_code=202)
    def run(session_id: str):
        session = get_session(session_id)
        session.start_run(wait=False)
        return {"accepted": True, "session_id": session_id}

    @app.post("/api/sessions/{session_id}/count")
    def count(session_id: str, body: CountRequest):
        session = get_session(session_id)
        config = body.resolve_config(session.zones)
        ledger = session.run_count(config, quick=body.mode == "quick")
        return ledger.snapshot()

    @app.post("/api/sessions/{session_id}/eval")
    def evaluate(session_id: str, body: EvalRequest):
        session = get_session(session_id)
        report = session.run_eval(body.gt_path)
        return json.loads(report.to_json())

    @app.get("/api/sessions/{session_id}/counts")
    def counts(session_id: str):
        session = get_session(session_id)
        last = session.latest_ledger()
        if last is None:
            raise HTTPException(status_code=404, detail="no count has been run yet")
        return last

    @app.get("/api/sessions/{session_id}/gallery")
    def gallery_index(session_id: str):
        from ..gallery import Gallery

        session = get_session(session_id)
        return {"templates": Gallery(session.gallery_dir).snapshot()}

    @app.get("/api/sessions/{session_id}/events")
    def events(session_id: str, follow: bool = True):
        session = get_session(session_id)

        def sse(event) -> str:
            return f"data: {json.dumps(event.to_json(), separators=(',', ':'))}\n\n"

        if not follow:
            body = "".join(sse(e) for e in session.events.history())
            return Response(content=body, media_type="text/event-stream")

        def stream():
            q = session.events.subscribe(replay_history=True)
            try:
                while True:
                    try:
                        event = q.get(timeout=SSE_POLL_SECONDS)
                    except queue.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    yield sse(event)
            finally:
                session.events.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    ui_dir = os.environ.get("AIV_UI_DIR", "")
    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
