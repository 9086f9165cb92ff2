"""Structured-output parsing with a strict, ordered repair pipeline.

Model output is accepted if it is (or repairs to) one JSON object matching
the annotation schema. Repairs are applied in a fixed documented order and
each applied step is recorded:

  1. ``strip_fences``         — remove markdown code-fence wrappers;
  2. ``extract_first_object`` — pull the single balanced ``{...}`` span out of
     surrounding prose (two or more top-level objects are ambiguous and fail
     with ``multiple_objects``);
  3. ``coerce_numbers``       — numeric strings for amounts/integers, bare
     numbers or digit-grouped strings for money (default currency applied);
  4. ``normalize_dates``      — ``dd/mm/yyyy`` and ``dd-mm-yyyy`` to ISO-8601;
  5. ``map_label_aliases``    — case/whitespace folding plus the alias table
     below.

Anything beyond these five steps fails with a precise failure class. The
pipeline is deliberately finite and deterministic so failure statistics stay
reproducible; there is no model-assisted self-repair. Repairing an already
valid document is the identity: it parses with an empty repair list.

Alias table (applied after lowercasing/stripping):
  sentiment:  normal -> none, neutral -> none
  call_stage: open -> opening, verify -> verification, closing -> closure
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from typing import Mapping, Optional

from ..model import (
    CallStageLabel,
    DEFAULT_CURRENCY,
    EmotionLabel,
    IntentTaxonomy,
    MoneyAmount,
    SentimentLabel,
    SLOT_NAMES,
    SlotValues,
    TurnAnnotation,
    default_taxonomy,
)

REPAIR_STRIP_FENCES = "strip_fences"
REPAIR_EXTRACT_FIRST_OBJECT = "extract_first_object"
REPAIR_COERCE_NUMBERS = "coerce_numbers"
REPAIR_NORMALIZE_DATES = "normalize_dates"
REPAIR_MAP_LABEL_ALIASES = "map_label_aliases"

LABEL_ALIASES: dict[str, dict[str, str]] = {
    "emotion": {},
    "sentiment": {"normal": "none", "neutral": "none"},
    "call_stage": {"open": "opening", "verify": "verification", "closing": "closure"},
}


class FailureClass(str, Enum):
    NOT_JSON = "not_json"
    SCHEMA_VIOLATION = "schema_violation"
    UNKNOWN_LABEL = "unknown_label"
    MULTIPLE_OBJECTS = "multiple_objects"
    EMPTY_OUTPUT = "empty_output"


@dataclass(frozen=True)
class ParseOutcome:
    annotation: Optional[TurnAnnotation]
    repairs_applied: tuple[str, ...] = ()
    failure_class: Optional[FailureClass] = None
    detail: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.annotation is None) == (self.failure_class is None):
            raise ValueError("exactly one of annotation/failure_class must be set")

    @property
    def ok(self) -> bool:
        return self.annotation is not None


class _ParseFailure(Exception):
    def __init__(self, failure_class: FailureClass, detail: str) -> None:
        super().__init__(detail)
        self.failure_class = failure_class
        self.detail = detail


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?|```")


def _strip_fences(text: str) -> tuple[str, bool]:
    if "```" not in text:
        return text, False
    return _FENCE_RE.sub("", text), True


def _top_level_objects(text: str) -> list[str]:
    """String-aware scan for balanced top-level {...} spans."""
    spans: list[str] = []
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append(text[start : i + 1])
    return spans


_GROUPED_NUMBER_RE = re.compile(r"^\d{1,3}(?:[.,]\d{3})+$")
_PLAIN_NUMBER_RE = re.compile(r"^\d+$")


def _coerce_int(value: object) -> Optional[tuple[int, bool]]:
    """Returns (int, was_repaired) or None when not coercible."""
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value, False
    if isinstance(value, str):
        s = value.strip()
        if _PLAIN_NUMBER_RE.match(s):
            return int(s), True
        if _GROUPED_NUMBER_RE.match(s):
            return int(re.sub(r"[.,]", "", s)), True
    return None


_DATE_FORMATS = ("%Y-%m-%d", "%d/%m/%Y", "%d-%m-%Y")


def normalize_date_string(value: str) -> Optional[tuple[date, bool]]:
    """Parse a date in one of the supported formats; reports whether a
    non-ISO format was normalized."""
    s = value.strip()
    for i, fmt in enumerate(_DATE_FORMATS):
        try:
            return datetime.strptime(s, fmt).date(), i > 0
        except ValueError:
            continue
    return None


def _resolve_label(field: str, value: object, allowed: tuple[str, ...]) -> tuple[str, bool]:
    if not isinstance(value, str):
        raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}: expected string label")
    if value in allowed:
        return value, False
    folded = value.strip().lower()
    folded = LABEL_ALIASES.get(field, {}).get(folded, folded)
    if folded in allowed:
        return folded, True
    raise _ParseFailure(FailureClass.UNKNOWN_LABEL, f"{field}: unknown label {value!r}")


def _parse_money(field: str, value: object, repairs: set) -> MoneyAmount:
    if isinstance(value, Mapping):
        extra = set(value) - {"amount", "currency"}
        if extra:
            raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}: unexpected keys {sorted(extra)}")
        coerced = _coerce_int(value.get("amount"))
        if coerced is None:
            raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}.amount: not an integer")
        amount, repaired = coerced
        currency = value.get("currency", DEFAULT_CURRENCY)
        if currency is None:
            currency = DEFAULT_CURRENCY
            repaired = True
        if not isinstance(currency, str) or not currency:
            raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}.currency: bad currency")
        if repaired:
            repairs.add(REPAIR_COERCE_NUMBERS)
    else:
        coerced = _coerce_int(value)
        if coerced is None:
            raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}: not a money value")
        amount, _ = coerced
        currency = DEFAULT_CURRENCY
        repairs.add(REPAIR_COERCE_NUMBERS)
    if amount <= 0:
        raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"{field}: amount must be positive")
    return MoneyAmount(amount, currency)


def _parse_slots(data: object, repairs: set) -> SlotValues:
    if data is None:
        return SlotValues()
    if not isinstance(data, Mapping):
        raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, "slots: expected object")
    unknown = set(data) - set(SLOT_NAMES)
    if unknown:
        raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"slots: unknown slots {sorted(unknown)}")
    kwargs: dict = {}
    for name, raw in data.items():
        if raw is None:
            continue
        if name in ("total_debt", "promised_payment_amount"):
            kwargs[name] = _parse_money(f"slots.{name}", raw, repairs)
        elif name == "days_past_due":
            coerced = _coerce_int(raw)
            if coerced is None or coerced[0] < 0:
                raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"slots.{name}: not a non-negative integer")
            value, repaired = coerced
            if repaired:
                repairs.add(REPAIR_COERCE_NUMBERS)
            kwargs[name] = value
        elif name in ("promised_payment_date", "due_date"):
            if not isinstance(raw, str):
                raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"slots.{name}: expected date string")
            parsed = normalize_date_string(raw)
            if parsed is None:
                raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"slots.{name}: unparseable date {raw!r}")
            value, repaired = parsed
            if repaired:
                repairs.add(REPAIR_NORMALIZE_DATES)
            kwargs[name] = value
        else:
            if not isinstance(raw, str) or not raw.strip():
                raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, f"slots.{name}: expected non-empty string")
            kwargs[name] = raw
    return SlotValues(**kwargs)


def parse_structured_output(
    text: str,
    schema_version: str = "1",
    taxonomy: Optional[IntentTaxonomy] = None,
) -> ParseOutcome:
    """Run the repair pipeline over raw model text.

    Never raises past the boundary: failures come back classified in the
    outcome. schema_version selects the expected schema ("1" is the only one
    currently defined).
    """
    if schema_version != "1":
        return ParseOutcome(None, (), FailureClass.SCHEMA_VIOLATION, f"unknown schema version {schema_version!r}")
    taxonomy = taxonomy if taxonomy is not None else default_taxonomy()
    repairs: list[str] = []
    stripped = text.strip()
    if not stripped:
        return ParseOutcome(None, (), FailureClass.EMPTY_OUTPUT, "blank output")

    def _try_json(s: str) -> tuple[object, bool]:
        try:
            return json.loads(s), True
        except json.JSONDecodeError:
            return None, False

    candidate, parsed = _try_json(stripped)
    if not parsed:
        work = stripped
        defenced, did_strip = _strip_fences(work)
        if did_strip:
            repairs.append(REPAIR_STRIP_FENCES)
            work = defenced.strip()
            candidate, parsed = _try_json(work)
        if not parsed:
            objects = _top_level_objects(work)
            if len(objects) > 1:
                return ParseOutcome(
                    None,
                    tuple(repairs),
                    FailureClass.MULTIPLE_OBJECTS,
                    f"{len(objects)} top-level objects found",
                )
            if not objects:
                return ParseOutcome(None, tuple(repairs), FailureClass.NOT_JSON, "no JSON object found")
            repairs.append(REPAIR_EXTRACT_FIRST_OBJECT)
            candidate, parsed = _try_json(objects[0])
            if not parsed:
                return ParseOutcome(None, tuple(repairs), FailureClass.NOT_JSON, "extracted object invalid")

    if isinstance(candidate, list) and len(candidate) > 1 and all(isinstance(x, Mapping) for x in candidate):
        # an array of complete annotations is as ambiguous as concatenation
        return ParseOutcome(None, tuple(repairs), FailureClass.MULTIPLE_OBJECTS, "array of objects")
    if not isinstance(candidate, Mapping):
        return ParseOutcome(None, tuple(repairs), FailureClass.SCHEMA_VIOLATION, "top-level value is not an object")

    required = {"emotion", "sentiment", "intent", "call_stage"}
    missing = required - set(candidate)
    if missing:
        return ParseOutcome(
            None, tuple(repairs), FailureClass.SCHEMA_VIOLATION, f"missing fields {sorted(missing)}"
        )
    unexpected = set(candidate) - required - {"slots"}
    if unexpected:
        return ParseOutcome(
            None, tuple(repairs), FailureClass.SCHEMA_VIOLATION, f"unexpected fields {sorted(unexpected)}"
        )

    repair_set: set[str] = set()
    try:
        emotion_value, emotion_aliased = _resolve_label(
            "emotion", candidate["emotion"], tuple(e.value for e in EmotionLabel)
        )
        sentiment_value, sentiment_aliased = _resolve_label(
            "sentiment", candidate["sentiment"], tuple(s.value for s in SentimentLabel)
        )
        stage_value, stage_aliased = _resolve_label(
            "call_stage", candidate["call_stage"], tuple(s.value for s in CallStageLabel)
        )
        intent_raw = candidate["intent"]
        if not isinstance(intent_raw, str):
            raise _ParseFailure(FailureClass.SCHEMA_VIOLATION, "intent: expected string label")
        intent_aliased = False
        if intent_raw in taxonomy:
            intent_value = intent_raw
        else:
            folded = intent_raw.strip().lower()
            if folded in taxonomy:
                intent_value = folded
                intent_aliased = True
            else:
                raise _ParseFailure(FailureClass.UNKNOWN_LABEL, f"intent: unknown label {intent_raw!r}")
        slots = _parse_slots(candidate.get("slots"), repair_set)
    except _ParseFailure as failure:
        return ParseOutcome(None, tuple(repairs), failure.failure_class, failure.detail)

    if emotion_aliased or sentiment_aliased or stage_aliased or intent_aliased:
        repair_set.add(REPAIR_MAP_LABEL_ALIASES)
    # report pipeline steps in their documented order
    for step in (REPAIR_COERCE_NUMBERS, REPAIR_NORMALIZE_DATES, REPAIR_MAP_LABEL_ALIASES):
        if step in repair_set:
            repairs.append(step)

    annotation = TurnAnnotation(
        emotion=EmotionLabel(emotion_value),
        sentiment=SentimentLabel(sentiment_value),
        intent=intent_value,
        call_stage=CallStageLabel(stage_value),
        slots=slots,
    )
    return ParseOutcome(annotation, tuple(repairs), None)
