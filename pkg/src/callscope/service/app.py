"""HTTP API for live (streaming) and post-call workflows.

All payloads use the canonical serializations. The annotation stream is
server-sent events (the transport choice for the turn-ordered push channel):
GET /v1/sessions/{id}/stream?after=<seq> replays events with seq greater than
`after`, then stays open for live ones, so reconnecting clients resume from
their last confirmed sequence number without duplicates or gaps.

The service emits annotations and aggregates only — never customer-facing
language.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Mapping, Optional, Union

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from ..backends import ChatCompletionsBackend, ChatEndpointConfig, OracleBackend
from ..backends.base import AnnotatorBackend
from ..context import ContextPolicy, FULL_HISTORY
from ..model import Speaker, default_taxonomy, load_taxonomy
from ..serialize import conversation_from_dict
from .sessions import (
    NoAnnotatedTurns,
    SessionError,
    SessionFinalized,
    SessionManager,
    UnknownBackend,
    UnknownSession,
    batch_annotate,
)
from .store import EVENT_RECORD_FINALIZED, EventStore

STREAM_POLL_SECONDS = 0.5


class ServiceConfig:
    def __init__(self, data: Mapping) -> None:
        self.store_dir = data.get("store_dir", "./callscope-store")
        self.host = data.get("host", "127.0.0.1")
        self.port = int(data.get("port", 8077))
        self.auth_token = data.get("auth_token")
        self.default_policy = (
            ContextPolicy.from_dict(data["default_policy"])
            if data.get("default_policy")
            else FULL_HISTORY
        )
        self.backend_configs = list(data.get("backends", [{"type": "oracle", "id": "oracle"}]))
        self.taxonomy_file = data.get("taxonomy_file")
        self.fsync = bool(data.get("fsync", False))

    @classmethod
    def load(cls, source: Union[str, Path, Mapping]) -> "ServiceConfig":
        if isinstance(source, Mapping):
            return cls(source)
        with open(source, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


def build_backends(config: ServiceConfig) -> dict[str, AnnotatorBackend]:
    taxonomy = load_taxonomy(config.taxonomy_file) if config.taxonomy_file else default_taxonomy()
    backends: dict[str, AnnotatorBackend] = {}
    for raw in config.backend_configs:
        kind = raw.get("type", "oracle")
        if kind == "oracle":
            backend = OracleBackend(identity=raw.get("id", "oracle"), taxonomy=taxonomy)
        elif kind == "chat_completions":
            backend = ChatCompletionsBackend(ChatEndpointConfig.from_dict(raw), taxonomy=taxonomy)
        else:
            raise ValueError(f"unknown backend type {kind!r}")
        backends[backend.identity] = backend
    return backends


class CreateSessionBody(BaseModel):
    session_id: str
    backend: str
    policy: Optional[dict] = None


class PushTurnBody(BaseModel):
    speaker: str
    text: str


def create_app(config: Union[ServiceConfig, Mapping, str, Path]) -> FastAPI:
    if not isinstance(config, ServiceConfig):
        config = ServiceConfig.load(config)
    store = EventStore(config.store_dir, fsync=config.fsync)
    backends = build_backends(config)
    manager = SessionManager(store, backends, config.default_policy)

    app = FastAPI(title="callscope", version="0.1.0")
    app.state.manager = manager
    app.state.config = config

    def check_auth(authorization: Optional[str] = Header(default=None)) -> None:
        if config.auth_token is None:
            return
        if authorization != f"Bearer {config.auth_token}":
            raise HTTPException(status_code=401, detail="invalid or missing bearer token")

    @app.get("/v1/healthz")
    def healthz() -> dict:
        return {"status": "ok", "backends": sorted(backends)}

    @app.post("/v1/sessions", dependencies=[Depends(check_auth)])
    def open_session(body: CreateSessionBody) -> JSONResponse:
        try:
            policy = ContextPolicy.from_dict(body.policy) if body.policy else None
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad policy: {exc}")
        try:
            state = manager.open_session(body.session_id, body.backend, policy)
        except UnknownBackend as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return JSONResponse(state.to_dict())

    @app.get("/v1/sessions/{session_id}", dependencies=[Depends(check_auth)])
    def get_session(session_id: str) -> JSONResponse:
        try:
            return JSONResponse(manager.get(session_id).to_dict())
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/v1/sessions/{session_id}/turns", dependencies=[Depends(check_auth)])
    def push_turn(session_id: str, body: PushTurnBody) -> JSONResponse:
        try:
            speaker = Speaker(body.speaker)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown speaker {body.speaker!r}")
        try:
            record = manager.push_turn(session_id, speaker, body.text)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except SessionFinalized as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except SessionError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        state = manager.get(session_id)
        payload = record.to_dict()
        payload["seq"] = state.last_seq
        return JSONResponse(payload)

    @app.post("/v1/sessions/{session_id}/finalize", dependencies=[Depends(check_auth)])
    def finalize(session_id: str) -> JSONResponse:
        from ..aggregation import call_record_to_dict

        try:
            record = manager.finalize(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except NoAnnotatedTurns as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return JSONResponse(call_record_to_dict(record))

    @app.get("/v1/sessions/{session_id}/stream", dependencies=[Depends(check_auth)])
    def stream(
        session_id: str,
        after: int = Query(default=0, ge=0),
        wait: float = Query(default=-1.0),
    ) -> StreamingResponse:
        """Replay events with seq > after, then stream live ones. The stream
        ends at record-finalized. wait bounds how long to idle for new events:
        negative means indefinitely (live subscription), 0 means replay what
        is available and close (catch-up poll)."""
        import time

        try:
            manager.get(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))

        def event_source() -> Iterator[str]:
            cursor = after
            deadline = None if wait < 0 else time.monotonic() + wait
            while True:
                events = manager.events_after(session_id, cursor)
                if not events:
                    if deadline is not None and time.monotonic() >= deadline:
                        return
                    events = manager.wait_for_events(session_id, cursor, STREAM_POLL_SECONDS)
                    if not events:
                        yield ": keep-alive\n\n"
                        continue
                for event in events:
                    payload = json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True)
                    yield f"id: {event.seq}\nevent: {event.type}\ndata: {payload}\n\n"
                    cursor = event.seq
                    if event.type == EVENT_RECORD_FINALIZED:
                        return

        return StreamingResponse(event_source(), media_type="text/event-stream")

    @app.post("/v1/batch", dependencies=[Depends(check_auth)])
    def batch(body: dict) -> JSONResponse:
        backend_id = body.get("backend")
        if backend_id not in backends:
            raise HTTPException(status_code=400, detail=f"unknown backend {backend_id!r}")
        try:
            policy = (
                ContextPolicy.from_dict(body["policy"]) if body.get("policy") else config.default_policy
            )
            conversations = [conversation_from_dict(c) for c in body.get("conversations", [])]
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        result = batch_annotate(conversations, backends[backend_id], policy)
        return JSONResponse(
            {
                "calls": [call.to_dict() for call in result.calls],
                "gaps": result.gaps,
                "n_turns": result.n_turns,
                "n_annotated": result.n_annotated,
            }
        )

    @app.get("/v1/reports/{session_id}", dependencies=[Depends(check_auth)])
    def report(session_id: str) -> JSONResponse:
        from ..aggregation import call_record_to_dict

        try:
            state = manager.get(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if state.record is None:
            raise HTTPException(status_code=404, detail=f"session {session_id!r} not finalized")
        return JSONResponse(call_record_to_dict(state.record))

    return app
