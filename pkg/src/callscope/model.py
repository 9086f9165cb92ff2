"""Domain model for contact-center call analytics.

Conversations are ordered lists of speaker turns; each turn can carry a
five-part annotation (emotion, sentiment, intent, call stage, slot values).
Everything here is immutable after construction and safe to share across
threads. Validators report violations as data instead of raising, so callers
can collect every problem in one pass.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union


class Speaker(str, Enum):
    AGENT = "agent"
    CUSTOMER = "customer"


class EmotionLabel(str, Enum):
    NEUTRAL = "neutral"
    NEGATIVE = "negative"
    POSITIVE = "positive"


class SentimentLabel(str, Enum):
    """Confrontational-behavior label. Most turns carry NONE: absence of
    confrontation must be representable explicitly, not as a missing value."""

    NONE = "none"
    REFUSAL = "refusal"
    INSULT = "insult"
    THREAT = "threat"


class CallStageLabel(str, Enum):
    OPENING = "opening"
    VERIFICATION = "verification"
    NEGOTIATION = "negotiation"
    COMMITMENT = "commitment"
    CLOSURE = "closure"


#: Canonical progression order used by stage-monotonicity checks.
STAGE_ORDER: tuple[CallStageLabel, ...] = (
    CallStageLabel.OPENING,
    CallStageLabel.VERIFICATION,
    CallStageLabel.NEGOTIATION,
    CallStageLabel.COMMITMENT,
    CallStageLabel.CLOSURE,
)

#: The seven extractable business entities, in reporting order.
SLOT_NAMES: tuple[str, ...] = (
    "agent_name",
    "customer_name",
    "total_debt",
    "days_past_due",
    "promised_payment_date",
    "promised_payment_amount",
    "due_date",
)

TASK_NAMES: tuple[str, ...] = ("emotion", "sentiment", "intent", "call_stage")

DEFAULT_CURRENCY = "VND"


@dataclass(frozen=True)
class MoneyAmount:
    """Money in integer minor units plus ISO-4217 currency code.

    Storing minor units keeps exact-match comparison well-defined; display
    formatting is a view concern.
    """

    amount: int
    currency: str = DEFAULT_CURRENCY

    def __post_init__(self) -> None:
        if not isinstance(self.amount, int) or isinstance(self.amount, bool):
            raise TypeError(f"amount must be an int, got {self.amount!r}")


@dataclass(frozen=True)
class SlotValues:
    """The seven business entities. All optional; amounts strictly positive
    and dates valid calendar dates when present."""

    agent_name: Optional[str] = None
    customer_name: Optional[str] = None
    total_debt: Optional[MoneyAmount] = None
    days_past_due: Optional[int] = None
    promised_payment_date: Optional[date] = None
    promised_payment_amount: Optional[MoneyAmount] = None
    due_date: Optional[date] = None

    def is_empty(self) -> bool:
        return all(getattr(self, name) is None for name in SLOT_NAMES)

    def non_null(self) -> dict[str, object]:
        return {
            name: getattr(self, name)
            for name in SLOT_NAMES
            if getattr(self, name) is not None
        }

    def get(self, name: str) -> object:
        if name not in SLOT_NAMES:
            raise KeyError(f"unknown slot {name!r}")
        return getattr(self, name)


EMPTY_SLOTS = SlotValues()


@dataclass(frozen=True)
class TurnAnnotation:
    """The five-task structured output for one turn. All four labels are
    mandatory; the slot block may be entirely empty."""

    emotion: EmotionLabel
    sentiment: SentimentLabel
    intent: str
    call_stage: CallStageLabel
    slots: SlotValues = EMPTY_SLOTS


@dataclass(frozen=True)
class Turn:
    turn_index: int
    speaker: Speaker
    text: str
    start_ms: Optional[int] = None
    end_ms: Optional[int] = None
    gold: Optional[TurnAnnotation] = None


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    turns: tuple[Turn, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self) -> int:
        return len(self.turns)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - convenience only
        return f"{self.path}: {self.message}"


def validate_conversation(conv: Conversation) -> list[Violation]:
    """Check every conversation-level invariant; returns all violations.

    Pure: never mutates the input, identical calls yield identical results.
    An empty list means the conversation is valid.
    """
    out: list[Violation] = []
    if not conv.conversation_id:
        out.append(Violation("conversation_id", "empty conversation_id"))
    if len(conv.turns) == 0:
        out.append(Violation("turns", "empty conversation"))
    for pos, turn in enumerate(conv.turns):
        prefix = f"turns[{pos}]"
        if turn.turn_index != pos:
            out.append(
                Violation(
                    f"{prefix}.turn_index",
                    f"non-dense turn_index at position {pos} (got {turn.turn_index})",
                )
            )
        if not isinstance(turn.speaker, Speaker):
            out.append(Violation(f"{prefix}.speaker", f"unknown speaker {turn.speaker!r}"))
        if not turn.text or not turn.text.strip():
            out.append(Violation(f"{prefix}.text", "empty text"))
        for ts_name in ("start_ms", "end_ms"):
            ts = getattr(turn, ts_name)
            if ts is not None and ts < 0:
                out.append(Violation(f"{prefix}.{ts_name}", "negative timestamp"))
        if turn.start_ms is not None and turn.end_ms is not None:
            if turn.end_ms < turn.start_ms:
                out.append(Violation(f"{prefix}.end_ms", "end_ms before start_ms"))
        if turn.gold is not None:
            out.extend(validate_annotation(turn.gold, path=f"{prefix}.gold"))
    for key, value in conv.metadata.items():
        if not isinstance(key, str) or not isinstance(value, str):
            out.append(Violation(f"metadata[{key!r}]", "metadata keys and values must be strings"))
    return out


def validate_annotation(
    ann: TurnAnnotation,
    taxonomy: Optional["IntentTaxonomy"] = None,
    path: str = "annotation",
) -> list[Violation]:
    """Check one annotation against the closed label sets, the active intent
    taxonomy (default taxonomy if none given) and the slot-value rules."""
    out: list[Violation] = []
    if not isinstance(ann.emotion, EmotionLabel):
        out.append(Violation(f"{path}.emotion", f"not an emotion label: {ann.emotion!r}"))
    if not isinstance(ann.sentiment, SentimentLabel):
        out.append(Violation(f"{path}.sentiment", f"not a sentiment label: {ann.sentiment!r}"))
    if not isinstance(ann.call_stage, CallStageLabel):
        out.append(Violation(f"{path}.call_stage", f"not a call stage: {ann.call_stage!r}"))
    tax = taxonomy if taxonomy is not None else default_taxonomy()
    if ann.intent not in tax:
        out.append(Violation(f"{path}.intent", f"intent {ann.intent!r} not in taxonomy {tax.content_hash[:8]}"))
    slots = ann.slots
    for name in ("total_debt", "promised_payment_amount"):
        money = getattr(slots, name)
        if money is not None:
            if not isinstance(money, MoneyAmount):
                out.append(Violation(f"{path}.slots.{name}", "not a money amount"))
            elif money.amount <= 0:
                out.append(Violation(f"{path}.slots.{name}", "amount must be strictly positive"))
            elif not money.currency:
                out.append(Violation(f"{path}.slots.{name}", "missing currency code"))
    if slots.days_past_due is not None and slots.days_past_due < 0:
        out.append(Violation(f"{path}.slots.days_past_due", "must be non-negative"))
    for name in ("promised_payment_date", "due_date"):
        value = getattr(slots, name)
        if value is not None and not isinstance(value, date):
            out.append(Violation(f"{path}.slots.{name}", "not a calendar date"))
    for name in ("agent_name", "customer_name"):
        value = getattr(slots, name)
        if value is not None and not value.strip():
            out.append(Violation(f"{path}.slots.{name}", "empty name"))
    return out


def segment_runs(labels: Sequence[object]) -> list[tuple[int, int, object]]:
    """Derive segment-level spans as maximal runs of consecutive turns sharing
    a label: [(start_index, end_index_inclusive, label), ...].

    Segments are a view over turn-level labels, never stored.
    """
    runs: list[tuple[int, int, object]] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((start, i - 1, labels[start]))
            start = i
    return runs


# ---------------------------------------------------------------------------
# Intent taxonomy
# ---------------------------------------------------------------------------


DEFAULT_INTENT_LABELS: tuple[str, ...] = (
    "cooperate",
    "promise_payment",
    "request_deferment",
    "refuse_payment",
    "dispute_debt",
    "request_information",
    "wrong_person",
    "evade",
    "other",
)

#: Catch-all member every taxonomy is expected to carry.
FALLBACK_INTENT = "other"


class TaxonomyError(ValueError):
    """Raised for malformed taxonomy documents (duplicates, empty label list)."""


@dataclass(frozen=True)
class IntentTaxonomy:
    """Immutable intent label set with an order-insensitive content hash.

    Two documents listing the same labels in different orders hash
    identically; the version string is whatever the document declares.
    """

    labels: tuple[str, ...]
    version: str
    content_hash: str

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __len__(self) -> int:
        return len(self.labels)


def _taxonomy_hash(labels: Iterable[str]) -> str:
    joined = "\n".join(sorted(labels))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def load_taxonomy(source: Union[str, Path, Mapping]) -> IntentTaxonomy:
    """Load a taxonomy document ({"version": ..., "labels": [...]}) from a
    path or an already-parsed mapping."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    if not isinstance(doc, Mapping):
        raise TaxonomyError("taxonomy document must be an object")
    labels = doc.get("labels")
    if not isinstance(labels, (list, tuple)) or not labels:
        raise TaxonomyError("taxonomy document lists no labels")
    cleaned: list[str] = []
    seen: set[str] = set()
    for label in labels:
        if not isinstance(label, str) or not label.strip():
            raise TaxonomyError(f"invalid label {label!r}")
        label = label.strip()
        if label in seen:
            raise TaxonomyError(f"duplicate label {label!r}")
        seen.add(label)
        cleaned.append(label)
    version = str(doc.get("version", "unversioned"))
    return IntentTaxonomy(tuple(cleaned), version, _taxonomy_hash(cleaned))


_DEFAULT_TAXONOMY: Optional[IntentTaxonomy] = None


def default_taxonomy() -> IntentTaxonomy:
    """The shipped 9-label fixture. Non-authoritative: the underlying label
    inventory is deployment-configurable, this is only the packaged default."""
    global _DEFAULT_TAXONOMY
    if _DEFAULT_TAXONOMY is None:
        _DEFAULT_TAXONOMY = load_taxonomy(
            {"version": "default-1", "labels": list(DEFAULT_INTENT_LABELS)}
        )
    return _DEFAULT_TAXONOMY

