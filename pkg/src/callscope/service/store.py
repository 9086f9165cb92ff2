"""Append-only, file-backed event store: one JSONL log per conversation.

Events are sequence-numbered densely from 1 and timestamped; the log is the
source of truth — replaying it reconstructs session state exactly, which is
what makes crash recovery testable. A torn trailing line (crash mid-write) is
tolerated on replay; corruption anywhere else is an error.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping, Union

EVENT_SESSION_OPENED = "session-opened"
EVENT_TURN_ADDED = "turn-added"
EVENT_ANNOTATION_ADDED = "annotation-added"
EVENT_RECORD_FINALIZED = "record-finalized"

EVENT_TYPES = (
    EVENT_SESSION_OPENED,
    EVENT_TURN_ADDED,
    EVENT_ANNOTATION_ADDED,
    EVENT_RECORD_FINALIZED,
)


class StoreCorruption(RuntimeError):
    """A log line other than the last failed to decode."""


@dataclass(frozen=True)
class StoreEvent:
    seq: int
    ts: str
    type: str
    data: Mapping

    def to_dict(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "type": self.type, "data": dict(self.data)}


_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]")


def _log_name(conversation_id: str) -> str:
    safe = _SAFE_ID.sub("_", conversation_id)
    if safe != conversation_id:
        import hashlib

        safe = f"{safe}-{hashlib.sha1(conversation_id.encode('utf-8')).hexdigest()[:8]}"
    return f"{safe}.log"


class ConversationLog:
    """Append-only log for one conversation. One logical writer at a time;
    appends flush (and optionally fsync) before the event is acknowledged."""

    def __init__(self, path: Path, fsync: bool = False) -> None:
        self.path = path
        self._fsync = fsync
        self._lock = threading.Lock()
        self._next_seq = 1
        if path.exists():
            events = self.read()
            self._next_seq = events[-1].seq + 1 if events else 1

    def append(self, event_type: str, data: Mapping) -> StoreEvent:
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event_type!r}")
        with self._lock:
            event = StoreEvent(
                seq=self._next_seq,
                ts=datetime.now(timezone.utc).isoformat(),
                type=event_type,
                data=dict(data),
            )
            line = json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                if self._fsync:
                    os.fsync(fh.fileno())
            self._next_seq += 1
            return event

    def read(self) -> list[StoreEvent]:
        if not self.path.exists():
            return []
        events: list[StoreEvent] = []
        with open(self.path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break  # torn trailing write from a crash; drop it
                raise StoreCorruption(f"{self.path}: undecodable line {i + 1}")
            events.append(StoreEvent(raw["seq"], raw["ts"], raw["type"], raw["data"]))
        for pos, event in enumerate(events, start=1):
            if event.seq != pos:
                raise StoreCorruption(
                    f"{self.path}: non-dense sequence at position {pos} (got {event.seq})"
                )
        return events


class EventStore:
    def __init__(self, directory: Union[str, Path], fsync: bool = False) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._logs: dict[str, ConversationLog] = {}
        self._lock = threading.Lock()

    def log_for(self, conversation_id: str) -> ConversationLog:
        with self._lock:
            log = self._logs.get(conversation_id)
            if log is None:
                log = ConversationLog(self.directory / _log_name(conversation_id), self._fsync)
                self._logs[conversation_id] = log
            return log

    def exists(self, conversation_id: str) -> bool:
        return (self.directory / _log_name(conversation_id)).exists()

    def conversation_ids(self) -> Iterator[str]:
        """IDs recoverable from disk (first event of each log carries the id)."""
        for path in sorted(self.directory.glob("*.log")):
            log = ConversationLog(path, self._fsync)
            events = log.read()
            if events:
                cid = events[0].data.get("conversation_id")
                if cid:
                    yield cid
