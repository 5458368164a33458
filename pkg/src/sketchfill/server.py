"""HTTP API over the pipeline, plus the background job runner.

Completion takes minutes, so POST /complete only enqueues: callers poll
GET /api/sessions/{id} until status reaches done/failed. Every session is
mutated by exactly one worker thread; reads snapshot under the same lock.
"""
from __future__ import annotations

import base64
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import raster
from .errors import (
    InvalidTransitionError,
    SessionIntegrityError,
    SessionNotFoundError,
    SketchfillError,
    SvgParseError,
    UnknownStrokeIdsError,
    UnsupportedSvgFeatureError,
)
from .optimizer import trace_to_csv
from .pipeline import (
    IterationRequest,
    Pipeline,
    SessionState,
    SessionStatus,
    load_session,
)
from .svgio import parse_svg, serialize_svg

__all__ = ["JobRunner", "create_app"]


class CreateSessionBody(BaseModel):
    prompt: str
    svg: str
    seed: int = 0


class IterateBody(BaseModel):
    retained_ids: list[str]
    new_svg: str = ""
    prompt: str | None = None


class JobRunner:
    """Keeps live sessions, runs completions on worker threads."""

    def __init__(self, pipeline: Pipeline, max_workers: int = 2):
        self.pipeline = pipeline
        self.executor = ThreadPoolExecutor(max_workers=max_workers)
        self.sessions: dict[str, SessionState] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.registry_lock = threading.Lock()
        self._shut_down = False

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self.registry_lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def add(self, session: SessionState) -> None:
        with self.registry_lock:
            self.sessions[session.id] = session
            self.locks.setdefault(session.id, threading.Lock())

    def get(self, session_id: str) -> SessionState:
        with self.registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            if self.pipeline.store is not None:
                session = load_session(session_id, self.pipeline.store)
                self.add(session)
                return session
            raise SessionNotFoundError(f"no session {session_id!r}")
        return session

    def enqueue_complete(self, session_id: str) -> None:
        session = self.get(session_id)
        lock = self._lock_for(session_id)
        with lock:
            if session.status is not SessionStatus.CREATED:
                raise InvalidTransitionError(
                    f"completion requires a created session, got {session.status.value}"
                )
            session.status = SessionStatus.STAGE1_RUNNING

        def run() -> None:
            with lock:
                if self._shut_down:
                    return
                # stage1 asserts on CREATED; restore the pre-claimed status
                session.status = SessionStatus.CREATED
                self.pipeline.complete(session)

        self.executor.submit(run)

    def shutdown(self) -> None:
        """Checkpoint in-flight jobs as failed('interrupted') and stop workers."""
        self._shut_down = True
        with self.registry_lock:
            sessions = list(self.sessions.values())
        for session in sessions:
            if session.status in (SessionStatus.STAGE1_RUNNING, SessionStatus.STAGE2_RUNNING):
                session.status = SessionStatus.FAILED
                session.failure_reason = "interrupted"
                if self.pipeline.store is not None:
                    from .pipeline import save_session

                    save_session(session, self.pipeline.store)
        self.executor.shutdown(wait=False, cancel_futures=True)


def _session_json(session: SessionState) -> dict:
    return {
        "id": session.id,
        "status": session.status.value,
        "prompt": session.base_prompt,
        "augmented_prompt": session.augmented.combined if session.augmented else None,
        "parent_id": session.parent_id,
        "failure_reason": session.failure_reason,
        "warning": session.warning,
        "rng_seed": session.rng_seed,
        "input_svg": serialize_svg(session.input_sketch),
        "intermediate_svg": serialize_svg(session.intermediate) if session.intermediate else None,
        "final_svg": serialize_svg(session.final) if session.final else None,
        "guidance_png": base64.b64encode(raster.png_bytes(session.guidance)).decode()
        if session.guidance
        else None,
        "loss_trace_rows": len(session.loss_trace),
        "adjustment_trace": [
            {
                "report_text": s.report_text,
                "program_text": s.program_text,
                "fingerprint": s.fingerprint,
                "stroke_count": s.stroke_count,
                "note": s.note,
            }
            for s in session.adjustment_trace
        ],
    }


def create_app(pipeline: Pipeline, static_dir: str | Path | None = None, max_workers: int = 2) -> FastAPI:
    runner = JobRunner(pipeline, max_workers=max_workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        runner.shutdown()

    app = FastAPI(title="sketchfill", lifespan=lifespan)
    app.state.runner = runner

    @app.exception_handler(SketchfillError)
    async def on_error(request, exc: SketchfillError):
        if isinstance(exc, (SessionNotFoundError, SessionIntegrityError)):
            code = 404
        elif isinstance(exc, InvalidTransitionError):
            code = 409
        elif isinstance(exc, (SvgParseError, UnsupportedSvgFeatureError, UnknownStrokeIdsError)):
            code = 422
        else:
            code = 500
        return JSONResponse(status_code=code, content={"detail": str(exc)})

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        if not body.prompt.strip():
            return JSONResponse(status_code=422, content={"detail": "prompt must be nonempty"})
        session = pipeline.create_session(body.prompt, body.svg, seed=body.seed)
        runner.add(session)
        return {"id": session.id}

    @app.post("/api/sessions/{session_id}/complete", status_code=202)
    def complete(session_id: str):
        runner.enqueue_complete(session_id)
        return {"status": "accepted"}

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        session = runner.get(session_id)
        with runner._lock_for(session_id):
            return _session_json(session)

    @app.get("/api/sessions/{session_id}/sketch")
    def get_sketch(session_id: str, stage: str = "final"):
        session = runner.get(session_id)
        with runner._lock_for(session_id):
            if stage == "input":
                sketch = session.input_sketch
            elif stage == "intermediate":
                sketch = session.intermediate
            elif stage == "final":
                sketch = session.final
            else:
                return JSONResponse(
                    status_code=422, content={"detail": f"stage must be input|intermediate|final, got {stage!r}"}
                )
            if sketch is None:
                return JSONResponse(status_code=404, content={"detail": f"session has no {stage} sketch yet"})
            return Response(content=serialize_svg(sketch), media_type="image/svg+xml")

    @app.get("/api/sessions/{session_id}/trace")
    def get_trace(session_id: str):
        session = runner.get(session_id)
        with runner._lock_for(session_id):
            return {
                "loss_csv": trace_to_csv(session.loss_trace),
                "adjustment_trace": _session_json(session)["adjustment_trace"],
            }

    @app.post("/api/sessions/{session_id}/iterate")
    def iterate(session_id: str, body: IterateBody):
        parent = runner.get(session_id)
        new_svg = body.new_svg.strip()
        if new_svg:
            fragment = parse_svg(new_svg)
        else:
            from .geometry import Sketch

            fragment = Sketch((), parent.input_sketch.canvas_w, parent.input_sketch.canvas_h)
        with runner._lock_for(session_id):
            child = pipeline.iterate(
                parent,
                IterationRequest(tuple(body.retained_ids), fragment, body.prompt),
            )
        runner.add(child)
        return {"id": child.id}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="webui")

    return app
