"""Canonical JSON forms and transcript file IO.

The canonical form is compact JSON with sorted keys and no nulls: optional
fields are omitted when absent, amounts are integer minor units, dates are
ISO-8601 strings. Because every value is an int or a string, serialization is
byte-stable: serialize(deserialize(x)) == x for any canonical document.

Transcript files come in two shapes:
  * one conversation per file (a single canonical conversation object), or
  * line-delimited turns, one JSON object per line with fields
    conversation_id, turn_index, speaker, text, start_ms, end_ms, gold.
"""

from __future__ import annotations

import json
from datetime import date, datetime
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Union

from .model import (
    CallStageLabel,
    Conversation,
    EmotionLabel,
    MoneyAmount,
    SentimentLabel,
    SLOT_NAMES,
    SlotValues,
    Speaker,
    Turn,
    TurnAnnotation,
)


class SerializationError(ValueError):
    """Raised when a document does not match the canonical schema."""


def canonical_json(data: object) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Leaf codecs
# ---------------------------------------------------------------------------


def money_to_dict(money: MoneyAmount) -> dict:
    return {"amount": money.amount, "currency": money.currency}


def money_from_dict(data: object, path: str = "money") -> MoneyAmount:
    if not isinstance(data, Mapping):
        raise SerializationError(f"{path}: expected object with amount/currency")
    amount = data.get("amount")
    if not isinstance(amount, int) or isinstance(amount, bool):
        raise SerializationError(f"{path}.amount: expected integer minor units")
    currency = data.get("currency")
    if not isinstance(currency, str) or not currency:
        raise SerializationError(f"{path}.currency: expected currency code")
    extra = set(data) - {"amount", "currency"}
    if extra:
        raise SerializationError(f"{path}: unexpected keys {sorted(extra)}")
    return MoneyAmount(amount, currency)


def date_to_str(value: date) -> str:
    return value.isoformat()


def date_from_str(value: object, path: str = "date") -> date:
    if not isinstance(value, str):
        raise SerializationError(f"{path}: expected ISO-8601 date string")
    try:
        return datetime.strptime(value, "%Y-%m-%d").date()
    except ValueError as exc:
        raise SerializationError(f"{path}: {exc}") from exc


_SLOT_KINDS = {
    "agent_name": "name",
    "customer_name": "name",
    "total_debt": "money",
    "days_past_due": "int",
    "promised_payment_date": "date",
    "promised_payment_amount": "money",
    "due_date": "date",
}


def slots_to_dict(slots: SlotValues) -> dict:
    out: dict = {}
    for name in SLOT_NAMES:
        value = getattr(slots, name)
        if value is None:
            continue
        kind = _SLOT_KINDS[name]
        if kind == "money":
            out[name] = money_to_dict(value)
        elif kind == "date":
            out[name] = date_to_str(value)
        else:
            out[name] = value
    return out


def slots_from_dict(data: object, path: str = "slots") -> SlotValues:
    if data is None:
        return SlotValues()
    if not isinstance(data, Mapping):
        raise SerializationError(f"{path}: expected object")
    unknown = set(data) - set(SLOT_NAMES)
    if unknown:
        raise SerializationError(f"{path}: unknown slots {sorted(unknown)}")
    kwargs: dict = {}
    for name, raw in data.items():
        if raw is None:
            continue
        kind = _SLOT_KINDS[name]
        if kind == "money":
            kwargs[name] = money_from_dict(raw, f"{path}.{name}")
        elif kind == "date":
            kwargs[name] = date_from_str(raw, f"{path}.{name}")
        elif kind == "int":
            if not isinstance(raw, int) or isinstance(raw, bool):
                raise SerializationError(f"{path}.{name}: expected integer")
            kwargs[name] = raw
        else:
            if not isinstance(raw, str) or not raw:
                raise SerializationError(f"{path}.{name}: expected non-empty string")
            kwargs[name] = raw
    return SlotValues(**kwargs)


def annotation_to_dict(ann: TurnAnnotation) -> dict:
    return {
        "emotion": ann.emotion.value,
        "sentiment": ann.sentiment.value,
        "intent": ann.intent,
        "call_stage": ann.call_stage.value,
        "slots": slots_to_dict(ann.slots),
    }


def annotation_from_dict(data: object, path: str = "annotation") -> TurnAnnotation:
    if not isinstance(data, Mapping):
        raise SerializationError(f"{path}: expected object")
    required = {"emotion", "sentiment", "intent", "call_stage"}
    missing = required - set(data)
    if missing:
        raise SerializationError(f"{path}: missing fields {sorted(missing)}")
    unknown = set(data) - required - {"slots"}
    if unknown:
        raise SerializationError(f"{path}: unexpected fields {sorted(unknown)}")
    try:
        emotion = EmotionLabel(data["emotion"])
        sentiment = SentimentLabel(data["sentiment"])
        stage = CallStageLabel(data["call_stage"])
    except ValueError as exc:
        raise SerializationError(f"{path}: {exc}") from exc
    intent = data["intent"]
    if not isinstance(intent, str) or not intent:
        raise SerializationError(f"{path}.intent: expected non-empty string")
    slots = slots_from_dict(data.get("slots"), f"{path}.slots")
    return TurnAnnotation(emotion, sentiment, intent, stage, slots)


def annotation_to_json(ann: TurnAnnotation) -> str:
    return canonical_json(annotation_to_dict(ann))


def annotation_from_json(text: str) -> TurnAnnotation:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"annotation: invalid JSON ({exc})") from exc
    return annotation_from_dict(data)


# ---------------------------------------------------------------------------
# Turns and conversations
# ---------------------------------------------------------------------------


def turn_to_dict(turn: Turn, conversation_id: Optional[str] = None) -> dict:
    out: dict = {
        "turn_index": turn.turn_index,
        "speaker": turn.speaker.value,
        "text": turn.text,
    }
    if conversation_id is not None:
        out["conversation_id"] = conversation_id
    if turn.start_ms is not None:
        out["start_ms"] = turn.start_ms
    if turn.end_ms is not None:
        out["end_ms"] = turn.end_ms
    if turn.gold is not None:
        out["gold"] = annotation_to_dict(turn.gold)
    return out


_TURN_FIELDS = {"conversation_id", "turn_index", "speaker", "text", "start_ms", "end_ms", "gold"}


def turn_from_dict(data: object, path: str = "turn") -> Turn:
    if not isinstance(data, Mapping):
        raise SerializationError(f"{path}: expected object")
    unknown = set(data) - _TURN_FIELDS
    if unknown:
        raise SerializationError(f"{path}: unexpected fields {sorted(unknown)}")
    for name in ("turn_index", "speaker", "text"):
        if name not in data:
            raise SerializationError(f"{path}: missing field {name!r}")
    idx = data["turn_index"]
    if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
        raise SerializationError(f"{path}.turn_index: expected non-negative integer")
    try:
        speaker = Speaker(data["speaker"])
    except ValueError as exc:
        raise SerializationError(f"{path}.speaker: {exc}") from exc
    text = data["text"]
    if not isinstance(text, str):
        raise SerializationError(f"{path}.text: expected string")
    start_ms = data.get("start_ms")
    end_ms = data.get("end_ms")
    for label, value in (("start_ms", start_ms), ("end_ms", end_ms)):
        if value is not None and (not isinstance(value, int) or isinstance(value, bool) or value < 0):
            raise SerializationError(f"{path}.{label}: expected non-negative integer")
    gold = data.get("gold")
    gold_ann = annotation_from_dict(gold, f"{path}.gold") if gold is not None else None
    return Turn(idx, speaker, text, start_ms, end_ms, gold_ann)


def conversation_to_dict(conv: Conversation) -> dict:
    return {
        "conversation_id": conv.conversation_id,
        "metadata": dict(sorted(conv.metadata.items())),
        "turns": [turn_to_dict(t) for t in conv.turns],
    }


def conversation_from_dict(data: object, path: str = "conversation") -> Conversation:
    if not isinstance(data, Mapping):
        raise SerializationError(f"{path}: expected object")
    unknown = set(data) - {"conversation_id", "metadata", "turns"}
    if unknown:
        raise SerializationError(f"{path}: unexpected fields {sorted(unknown)}")
    cid = data.get("conversation_id")
    if not isinstance(cid, str) or not cid:
        raise SerializationError(f"{path}.conversation_id: expected non-empty string")
    turns_raw = data.get("turns")
    if not isinstance(turns_raw, list):
        raise SerializationError(f"{path}.turns: expected list")
    turns = [turn_from_dict(t, f"{path}.turns[{i}]") for i, t in enumerate(turns_raw)]
    metadata = data.get("metadata") or {}
    if not isinstance(metadata, Mapping):
        raise SerializationError(f"{path}.metadata: expected object")
    return Conversation(cid, tuple(turns), dict(metadata))


def conversation_to_json(conv: Conversation) -> str:
    return canonical_json(conversation_to_dict(conv))


def conversation_from_json(text: str) -> Conversation:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"conversation: invalid JSON ({exc})") from exc
    return conversation_from_dict(data)


# ---------------------------------------------------------------------------
# Transcript files
# ---------------------------------------------------------------------------


def write_transcript_jsonl(conversations: Iterable[Conversation], target: Union[str, Path, IO[str]]) -> None:
    """One turn per line; turns of a conversation are written contiguously in
    index order so the file is replayable as a stream."""

    def _write(fh: IO[str]) -> None:
        for conv in conversations:
            for turn in conv.turns:
                fh.write(canonical_json(turn_to_dict(turn, conv.conversation_id)))
                fh.write("\n")

    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(target)


def read_transcript_jsonl(source: Union[str, Path, IO[str]]) -> list[Conversation]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = source.readlines()
    grouped: dict[str, list[Turn]] = {}
    order: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SerializationError(f"line {lineno}: invalid JSON ({exc})") from exc
        if not isinstance(data, Mapping) or "conversation_id" not in data:
            raise SerializationError(f"line {lineno}: missing conversation_id")
        cid = data["conversation_id"]
        if not isinstance(cid, str) or not cid:
            raise SerializationError(f"line {lineno}: bad conversation_id")
        turn = turn_from_dict({k: v for k, v in data.items() if k != "conversation_id"}, f"line {lineno}")
        if cid not in grouped:
            grouped[cid] = []
            order.append(cid)
        grouped[cid].append(turn)
    out = []
    for cid in order:
        turns = sorted(grouped[cid], key=lambda t: t.turn_index)
        out.append(Conversation(cid, tuple(turns), {}))
    return out


def read_transcript(path: Union[str, Path]) -> list[Conversation]:
    """Read either transcript shape; .jsonl files are line-delimited turns,
    anything else is a single conversation object per file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_transcript_jsonl(path)
    with open(path, "r", encoding="utf-8") as fh:
        return [conversation_from_json(fh.read())]


def read_corpus(path: Union[str, Path]) -> list[Conversation]:
    """Read a corpus from a transcript file or a directory of transcript files."""
    path = Path(path)
    if path.is_dir():
        out: list[Conversation] = []
        for child in sorted(path.iterdir()):
            if child.suffix in (".json", ".jsonl"):
                out.extend(read_transcript(child))
        return out
    return read_transcript(path)
