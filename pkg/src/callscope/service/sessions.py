"""Session lifecycle over the event store.

A session is one live conversation: turns append through push_turn, each
annotated against the session's context policy with all prior turns as
history, then finalize() aggregates and seals it. State is an event-log
projection: replaying a log reconstructs the session exactly, so process
restarts lose nothing and crash safety is testable by truncating logs.

Per-session writes serialize through a lock (annotations deliver in turn
order); independent sessions proceed in parallel. The raw output, repair
trail and fingerprint land in the annotation event before the result is
returned — audit completeness over convenience.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from ..aggregation import CallRecord, aggregate_call, call_record_from_dict, call_record_to_dict
from ..backends.base import AnnotatorBackend, BackendUnavailable
from ..backends.parsing import parse_structured_output
from ..context import (
    ContextPolicy,
    DEFAULT_INSTRUCTION_VERSION,
    FULL_HISTORY,
    build_context,
    request_fingerprint,
)
from ..model import Conversation, Speaker, Turn, TurnAnnotation, validate_conversation
from ..serialize import annotation_from_dict, annotation_to_dict
from .store import (
    EVENT_ANNOTATION_ADDED,
    EVENT_RECORD_FINALIZED,
    EVENT_SESSION_OPENED,
    EVENT_TURN_ADDED,
    EventStore,
    StoreEvent,
)


class SessionError(Exception):
    pass


class UnknownSession(SessionError):
    pass


class UnknownBackend(SessionError):
    pass


class SessionFinalized(SessionError):
    pass


class NoAnnotatedTurns(SessionError):
    pass


@dataclass
class AnnotationRecord:
    turn_index: int
    status: str  # "ok" | "failed"
    annotation: Optional[TurnAnnotation]
    error: Optional[str]
    fingerprint: str
    latency_ms: int
    raw_text: Optional[str]
    repairs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "status": self.status,
            "annotation": annotation_to_dict(self.annotation) if self.annotation else None,
            "error": self.error,
            "fingerprint": self.fingerprint,
            "latency_ms": self.latency_ms,
            "raw_text": self.raw_text,
            "repairs": list(self.repairs),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnnotationRecord":
        return cls(
            turn_index=data["turn_index"],
            status=data["status"],
            annotation=annotation_from_dict(data["annotation"]) if data.get("annotation") else None,
            error=data.get("error"),
            fingerprint=data.get("fingerprint", ""),
            latency_ms=data.get("latency_ms", 0),
            raw_text=data.get("raw_text"),
            repairs=tuple(data.get("repairs", ())),
        )


@dataclass
class SessionState:
    session_id: str
    backend_id: str
    policy: ContextPolicy
    turns: list[Turn] = field(default_factory=list)
    annotations: dict[int, AnnotationRecord] = field(default_factory=dict)
    finalized: bool = False
    record: Optional[CallRecord] = None
    last_seq: int = 0

    @property
    def cursor(self) -> int:
        return len(self.turns)

    def to_dict(self) -> dict:
        from ..serialize import turn_to_dict

        return {
            "session_id": self.session_id,
            "backend": self.backend_id,
            "policy": self.policy.to_dict(),
            "turns": [turn_to_dict(t) for t in self.turns],
            "annotations": {
                str(i): rec.to_dict() for i, rec in sorted(self.annotations.items())
            },
            "finalized": self.finalized,
            "record": call_record_to_dict(self.record) if self.record else None,
            "last_seq": self.last_seq,
        }


def replay_state(session_id: str, events: Sequence[StoreEvent]) -> SessionState:
    """Pure projection of an event sequence into session state."""
    state: Optional[SessionState] = None
    for event in events:
        if event.type == EVENT_SESSION_OPENED:
            state = SessionState(
                session_id=event.data["conversation_id"],
                backend_id=event.data["backend"],
                policy=ContextPolicy.from_dict(event.data["policy"]),
            )
        elif state is None:
            raise SessionError(f"{session_id}: log does not start with {EVENT_SESSION_OPENED}")
        elif event.type == EVENT_TURN_ADDED:
            data = event.data
            state.turns.append(
                Turn(
                    turn_index=data["turn_index"],
                    speaker=Speaker(data["speaker"]),
                    text=data["text"],
                )
            )
        elif event.type == EVENT_ANNOTATION_ADDED:
            record = AnnotationRecord.from_dict(event.data)
            state.annotations[record.turn_index] = record
        elif event.type == EVENT_RECORD_FINALIZED:
            state.finalized = True
            state.record = call_record_from_dict(event.data["record"])
        state.last_seq = event.seq
    if state is None:
        raise UnknownSession(session_id)
    return state


class SessionManager:
    def __init__(
        self,
        store: EventStore,
        backends: Mapping[str, AnnotatorBackend],
        default_policy: ContextPolicy = FULL_HISTORY,
        instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
    ) -> None:
        self.store = store
        self.backends = dict(backends)
        self.default_policy = default_policy
        self.instruction_version = instruction_version
        self._states: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._conditions: dict[str, threading.Condition] = {}
        for session_id in self.store.conversation_ids():
            self._load(session_id)

    # -- plumbing -----------------------------------------------------------

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _condition_for(self, session_id: str) -> threading.Condition:
        with self._locks_guard:
            return self._conditions.setdefault(session_id, threading.Condition())

    def _load(self, session_id: str) -> SessionState:
        events = self.store.log_for(session_id).read()
        if not events:
            raise UnknownSession(session_id)
        state = replay_state(session_id, events)
        self._states[session_id] = state
        return state

    def _notify(self, session_id: str) -> None:
        condition = self._condition_for(session_id)
        with condition:
            condition.notify_all()

    # -- operations ---------------------------------------------------------

    def open_session(
        self,
        session_id: str,
        backend_id: str,
        policy: Optional[ContextPolicy] = None,
    ) -> SessionState:
        """Create (or idempotently reopen) a session."""
        if backend_id not in self.backends:
            raise UnknownBackend(f"unknown backend {backend_id!r}")
        lock = self._lock_for(session_id)
        with lock:
            existing = self._states.get(session_id)
            if existing is None and self.store.exists(session_id):
                existing = self._load(session_id)
            if existing is not None:
                return existing
            policy = policy if policy is not None else self.default_policy
            state = SessionState(session_id=session_id, backend_id=backend_id, policy=policy)
            event = self.store.log_for(session_id).append(
                EVENT_SESSION_OPENED,
                {
                    "conversation_id": session_id,
                    "backend": backend_id,
                    "policy": policy.to_dict(),
                },
            )
            state.last_seq = event.seq
            self._states[session_id] = state
            self._notify(session_id)
            return state

    def get(self, session_id: str) -> SessionState:
        state = self._states.get(session_id)
        if state is None:
            if not self.store.exists(session_id):
                raise UnknownSession(f"unknown session {session_id!r}")
            state = self._load(session_id)
        return state

    def _annotate_turn(self, state: SessionState, turn: Turn) -> AnnotationRecord:
        conversation = Conversation(state.session_id, tuple(state.turns), {})
        request = build_context(
            conversation, turn.turn_index, state.policy, self.instruction_version
        )
        fingerprint = request_fingerprint(request)
        backend = self.backends[state.backend_id]
        try:
            outcome = backend.annotate(request)
        except BackendUnavailable as exc:
            return AnnotationRecord(
                turn_index=turn.turn_index,
                status="failed",
                annotation=None,
                error=str(exc),
                fingerprint=fingerprint,
                latency_ms=0,
                raw_text=None,
                repairs=(),
            )
        if outcome.ok:
            return AnnotationRecord(
                turn_index=turn.turn_index,
                status="ok",
                annotation=outcome.annotation,
                error=None,
                fingerprint=outcome.raw.request_fingerprint,
                latency_ms=outcome.raw.latency_ms,
                raw_text=outcome.raw.text,
                repairs=outcome.parse.repairs_applied,
            )
        return AnnotationRecord(
            turn_index=turn.turn_index,
            status="failed",
            annotation=None,
            error=f"{outcome.parse.failure_class.value}: {outcome.parse.detail}",
            fingerprint=outcome.raw.request_fingerprint,
            latency_ms=outcome.raw.latency_ms,
            raw_text=outcome.raw.text,
            repairs=outcome.parse.repairs_applied,
        )

    def push_turn(self, session_id: str, speaker: Speaker, text: str) -> AnnotationRecord:
        """Append a turn and annotate it against all prior session turns.

        The turn always persists; a backend failure marks the annotation
        failed (retryable via retry_annotation) without losing the turn.
        """
        if not text or not text.strip():
            raise SessionError("turn text must be non-empty")
        lock = self._lock_for(session_id)
        with lock:
            state = self.get(session_id)
            if state.finalized:
                raise SessionFinalized(f"session {session_id!r} is finalized")
            turn = Turn(turn_index=len(state.turns), speaker=speaker, text=text)
            log = self.store.log_for(session_id)
            event = log.append(
                EVENT_TURN_ADDED,
                {
                    "conversation_id": session_id,
                    "turn_index": turn.turn_index,
                    "speaker": speaker.value,
                    "text": text,
                },
            )
            state.turns.append(turn)
            state.last_seq = event.seq
            record = self._annotate_turn(state, turn)
            event = log.append(EVENT_ANNOTATION_ADDED, record.to_dict())
            state.annotations[turn.turn_index] = record
            state.last_seq = event.seq
        self._notify(session_id)
        return record

    def retry_annotation(self, session_id: str, turn_index: int) -> AnnotationRecord:
        lock = self._lock_for(session_id)
        with lock:
            state = self.get(session_id)
            if state.finalized:
                raise SessionFinalized(f"session {session_id!r} is finalized")
            if turn_index < 0 or turn_index >= len(state.turns):
                raise SessionError(f"turn {turn_index} out of range")
            existing = state.annotations.get(turn_index)
            if existing is not None and existing.status == "ok":
                return existing
            record = self._annotate_turn(state, state.turns[turn_index])
            event = self.store.log_for(session_id).append(EVENT_ANNOTATION_ADDED, record.to_dict())
            state.annotations[turn_index] = record
            state.last_seq = event.seq
        self._notify(session_id)
        return record

    def finalize(self, session_id: str) -> CallRecord:
        """Aggregate and seal; idempotent (a second call returns the stored
        record unchanged)."""
        lock = self._lock_for(session_id)
        with lock:
            state = self.get(session_id)
            if state.finalized:
                return state.record
            annotations: list[Optional[TurnAnnotation]] = []
            annotated = 0
            for turn in state.turns:
                record = state.annotations.get(turn.turn_index)
                if record is not None and record.status == "ok":
                    annotations.append(record.annotation)
                    annotated += 1
                else:
                    annotations.append(None)
            if annotated == 0:
                raise NoAnnotatedTurns("no annotated turns")
            conversation = Conversation(session_id, tuple(state.turns), {})
            call_record = aggregate_call(conversation, annotations)
            event = self.store.log_for(session_id).append(
                EVENT_RECORD_FINALIZED,
                {"conversation_id": session_id, "record": call_record_to_dict(call_record)},
            )
            state.finalized = True
            state.record = call_record
            state.last_seq = event.seq
        self._notify(session_id)
        return call_record

    # -- streaming support --------------------------------------------------

    def events_after(self, session_id: str, after_seq: int) -> list[StoreEvent]:
        self.get(session_id)  # raises UnknownSession
        return [e for e in self.store.log_for(session_id).read() if e.seq > after_seq]

    def wait_for_events(self, session_id: str, after_seq: int, timeout: float) -> list[StoreEvent]:
        """Block up to timeout for events newer than after_seq."""
        condition = self._condition_for(session_id)
        events = self.events_after(session_id, after_seq)
        if events:
            return events
        with condition:
            condition.wait(timeout)
        return self.events_after(session_id, after_seq)


# ---------------------------------------------------------------------------
# Batch annotation
# ---------------------------------------------------------------------------


@dataclass
class AnnotatedCall:
    conversation: Conversation
    annotations: list[Optional[TurnAnnotation]]
    record: Optional[CallRecord]

    def to_dict(self) -> dict:
        from ..serialize import conversation_to_dict

        return {
            "conversation": conversation_to_dict(self.conversation),
            "annotations": [
                annotation_to_dict(a) if a is not None else None for a in self.annotations
            ],
            "record": call_record_to_dict(self.record) if self.record else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnnotatedCall":
        from ..serialize import conversation_from_dict

        return cls(
            conversation=conversation_from_dict(data["conversation"]),
            annotations=[
                annotation_from_dict(a) if a is not None else None
                for a in data["annotations"]
            ],
            record=call_record_from_dict(data["record"]) if data.get("record") else None,
        )


@dataclass
class BatchResult:
    calls: list[AnnotatedCall]
    gaps: list[dict]  # [{conversation_id, turn_index, error}]

    @property
    def n_turns(self) -> int:
        return sum(len(c.conversation.turns) for c in self.calls)

    @property
    def n_annotated(self) -> int:
        return sum(sum(1 for a in c.annotations if a is not None) for c in self.calls)


def batch_annotate(
    corpus: Sequence[Conversation],
    backend: AnnotatorBackend,
    policy: ContextPolicy = FULL_HISTORY,
    instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
    cache=None,
) -> BatchResult:
    """Annotate whole transcripts turn-by-turn, equivalent to replaying each
    conversation through push_turn and finalizing: same context construction,
    same backend, same aggregation. Failures become gap manifest entries, and
    the per-call record is still produced when at least one turn annotated.
    """
    calls: list[AnnotatedCall] = []
    gaps: list[dict] = []
    for conv in corpus:
        problems = validate_conversation(conv)
        if problems:
            raise ValueError(f"{conv.conversation_id}: invalid conversation: {problems[0]}")
        annotations: list[Optional[TurnAnnotation]] = []
        for i in range(len(conv.turns)):
            request = build_context(conv, i, policy, instruction_version)
            fingerprint = request_fingerprint(request)
            text = cache.get(fingerprint) if cache is not None else None
            error: Optional[str] = None
            if text is None:
                try:
                    raw = backend.complete(request)
                    text = raw.text
                    if cache is not None:
                        cache.put(fingerprint, text)
                except BackendUnavailable as exc:
                    error = str(exc)
            if text is None:
                annotations.append(None)
                gaps.append(
                    {"conversation_id": conv.conversation_id, "turn_index": i, "error": error}
                )
                continue
            outcome = parse_structured_output(text, "1", backend.taxonomy)
            if outcome.ok:
                annotations.append(outcome.annotation)
            else:
                annotations.append(None)
                gaps.append(
                    {
                        "conversation_id": conv.conversation_id,
                        "turn_index": i,
                        "error": f"{outcome.failure_class.value}: {outcome.detail}",
                    }
                )
        record = None
        if any(a is not None for a in annotations):
            record = aggregate_call(conv, annotations)
        calls.append(AnnotatedCall(conv, annotations, record))
    return BatchResult(calls=calls, gaps=gaps)
