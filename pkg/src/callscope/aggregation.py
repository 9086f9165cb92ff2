"""Call-level rollup of turn annotations.

The final outcome is decided by an explicit, versioned rule table
(data/outcome_rules.json) evaluated top to bottom; business users tune the
table, not the code. Slot precedence is latest-non-null-wins: in collection
practice the final negotiated commitment supersedes earlier offers.

Rule predicates (all conditions in a rule are AND-ed):
  any_intent: <label>             — some annotated turn carries the intent
  last_commitment_intent: <label> — intent of the last commitment-stage turn
                                    whose intent is not the fallback "other"
                                    (acknowledgement fillers don't displace a
                                    commitment)
  has_promise_slots: true         — a promised amount or date survived rollup
  dominant_negative: <label>      — label has the strictly positive, higher
                                    count among refuse_payment / dispute_debt
                                    (ties go to refuse_payment)

The outcome categories themselves are an artifact invention: upstream
terminology names "final outcome determination" without enumerating
categories, so the six-way set here is documented as ours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .model import (
    CallStageLabel,
    Conversation,
    EmotionLabel,
    FALLBACK_INTENT,
    MoneyAmount,
    SentimentLabel,
    SLOT_NAMES,
    SlotValues,
    TurnAnnotation,
)


class CallOutcome(str, Enum):
    PAYMENT_COMMITTED = "payment_committed"
    DEFERRED = "deferred"
    REFUSED = "refused"
    DISPUTED = "disputed"
    UNRESOLVED = "unresolved"
    WRONG_PERSON = "wrong_person"


@dataclass(frozen=True)
class PromiseCommitment:
    amount: Optional[MoneyAmount]
    promised_date: Optional[object]  # datetime.date

    def __post_init__(self) -> None:
        if self.amount is None and self.promised_date is None:
            raise ValueError("a promise needs an amount or a date")


@dataclass(frozen=True)
class CallRecord:
    conversation_id: str
    final_outcome: CallOutcome
    promise: Optional[PromiseCommitment]
    stage_trace: tuple[tuple[int, CallStageLabel], ...]
    emotion_trace: tuple[tuple[int, EmotionLabel], ...]
    escalation_flag: bool
    confrontation_events: tuple[tuple[int, SentimentLabel], ...]
    slot_summary: SlotValues
    rule_table_version: str


# ---------------------------------------------------------------------------
# Outcome rule table
# ---------------------------------------------------------------------------

_KNOWN_PREDICATES = {"any_intent", "last_commitment_intent", "has_promise_slots", "dominant_negative"}


@dataclass(frozen=True)
class OutcomeRuleTable:
    version: str
    rules: tuple[tuple[CallOutcome, Mapping[str, object]], ...]


def load_outcome_rules(source: Union[str, Path, Mapping, None] = None) -> OutcomeRuleTable:
    if source is None:
        ref = resources.files("callscope.data").joinpath("outcome_rules.json")
        doc = json.loads(ref.read_text(encoding="utf-8"))
    elif isinstance(source, Mapping):
        doc = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    rules = []
    for rule in doc["rules"]:
        when = dict(rule.get("when", {}))
        unknown = set(when) - _KNOWN_PREDICATES
        if unknown:
            raise ValueError(f"unknown outcome-rule predicates {sorted(unknown)}")
        rules.append((CallOutcome(rule["outcome"]), when))
    return OutcomeRuleTable(version=str(doc.get("version", "unversioned")), rules=tuple(rules))


_DEFAULT_RULES: Optional[OutcomeRuleTable] = None


def default_outcome_rules() -> OutcomeRuleTable:
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        _DEFAULT_RULES = load_outcome_rules()
    return _DEFAULT_RULES


@dataclass(frozen=True)
class _CallFacts:
    intents: tuple[str, ...]
    last_commitment_intent: Optional[str]
    has_promise_slots: bool
    refuse_count: int
    dispute_count: int

    def dominant_negative(self) -> Optional[str]:
        if self.refuse_count == 0 and self.dispute_count == 0:
            return None
        return "refuse_payment" if self.refuse_count >= self.dispute_count else "dispute_debt"


def _evaluate(table: OutcomeRuleTable, facts: _CallFacts) -> CallOutcome:
    for outcome, when in table.rules:
        matched = True
        for predicate, expected in when.items():
            if predicate == "any_intent":
                matched = expected in facts.intents
            elif predicate == "last_commitment_intent":
                matched = facts.last_commitment_intent == expected
            elif predicate == "has_promise_slots":
                matched = facts.has_promise_slots == bool(expected)
            elif predicate == "dominant_negative":
                matched = facts.dominant_negative() == expected
            if not matched:
                break
        if matched:
            return outcome
    return CallOutcome.UNRESOLVED


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


class AggregationError(ValueError):
    pass


def aggregate_call(
    conv: Conversation,
    annotations: Sequence[Optional[TurnAnnotation]],
    rules: Optional[OutcomeRuleTable] = None,
) -> CallRecord:
    """Roll one conversation's turn annotations up to a CallRecord.

    annotations aligns 1:1 with turns; None marks an unannotated turn (failed
    or pending) and is excluded from traces and facts. Deterministic: same
    inputs, same record.
    """
    if len(annotations) != len(conv.turns):
        raise AggregationError(
            f"{conv.conversation_id}: {len(annotations)} annotations for {len(conv.turns)} turns"
        )
    rules = rules if rules is not None else default_outcome_rules()

    annotated: list[tuple[int, TurnAnnotation]] = [
        (turn.turn_index, ann)
        for turn, ann in zip(conv.turns, annotations)
        if ann is not None
    ]

    # latest-non-null-wins per slot
    slot_latest: dict[str, object] = {}
    for _, ann in annotated:
        for name in SLOT_NAMES:
            value = getattr(ann.slots, name)
            if value is not None:
                slot_latest[name] = value
    slot_summary = SlotValues(**slot_latest)

    stage_trace = tuple((idx, ann.call_stage) for idx, ann in annotated)
    emotion_trace = tuple((idx, ann.emotion) for idx, ann in annotated)
    confrontation_events = tuple(
        (idx, ann.sentiment) for idx, ann in annotated if ann.sentiment != SentimentLabel.NONE
    )

    # escalation: emotion moves non-negative -> negative at some j, and an
    # insult/threat occurs at or after j
    escalation = False
    seen_non_negative = False
    negative_since: Optional[int] = None
    for idx, ann in annotated:
        if ann.emotion in (EmotionLabel.NEUTRAL, EmotionLabel.POSITIVE):
            seen_non_negative = True
        elif ann.emotion == EmotionLabel.NEGATIVE and seen_non_negative and negative_since is None:
            negative_since = idx
        if (
            negative_since is not None
            and idx >= negative_since
            and ann.sentiment in (SentimentLabel.INSULT, SentimentLabel.THREAT)
        ):
            escalation = True
            break

    last_commitment_intent = None
    for _, ann in annotated:
        if ann.call_stage == CallStageLabel.COMMITMENT and ann.intent != FALLBACK_INTENT:
            last_commitment_intent = ann.intent
    intents = tuple(ann.intent for _, ann in annotated)
    facts = _CallFacts(
        intents=intents,
        last_commitment_intent=last_commitment_intent,
        has_promise_slots=(
            slot_summary.promised_payment_amount is not None
            or slot_summary.promised_payment_date is not None
        ),
        refuse_count=sum(1 for i in intents if i == "refuse_payment"),
        dispute_count=sum(1 for i in intents if i == "dispute_debt"),
    )
    outcome = _evaluate(rules, facts)

    promise = None
    if outcome == CallOutcome.PAYMENT_COMMITTED:
        promise = PromiseCommitment(
            amount=slot_summary.promised_payment_amount,
            promised_date=slot_summary.promised_payment_date,
        )

    return CallRecord(
        conversation_id=conv.conversation_id,
        final_outcome=outcome,
        promise=promise,
        stage_trace=stage_trace,
        emotion_trace=emotion_trace,
        escalation_flag=escalation,
        confrontation_events=confrontation_events,
        slot_summary=slot_summary,
        rule_table_version=rules.version,
    )


# ---------------------------------------------------------------------------
# Corpus rollup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RollupSummary:
    n_records: int
    promise_rate: Optional[float]
    mean_promised_amount: Optional[float]
    escalation_rate: Optional[float]
    outcome_distribution: Mapping[str, int]

    @property
    def empty(self) -> bool:
        return self.n_records == 0


def corpus_rollup(records: Sequence[CallRecord]) -> RollupSummary:
    """Business-metric summary over call records. Empty input yields an
    explicitly empty summary (rates None), never misleading zeros."""
    if not records:
        return RollupSummary(0, None, None, None, {})
    n = len(records)
    committed = [r for r in records if r.final_outcome == CallOutcome.PAYMENT_COMMITTED]
    amounts = [r.promise.amount.amount for r in committed if r.promise and r.promise.amount]
    distribution: dict[str, int] = {}
    for record in records:
        distribution[record.final_outcome.value] = distribution.get(record.final_outcome.value, 0) + 1
    return RollupSummary(
        n_records=n,
        promise_rate=len(committed) / n,
        mean_promised_amount=(sum(amounts) / len(amounts)) if amounts else None,
        escalation_rate=sum(1 for r in records if r.escalation_flag) / n,
        outcome_distribution=distribution,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def call_record_to_dict(record: CallRecord) -> dict:
    from .serialize import date_to_str, money_to_dict, slots_to_dict

    promise = None
    if record.promise is not None:
        promise = {}
        if record.promise.amount is not None:
            promise["amount"] = money_to_dict(record.promise.amount)
        if record.promise.promised_date is not None:
            promise["promised_date"] = date_to_str(record.promise.promised_date)
    return {
        "conversation_id": record.conversation_id,
        "final_outcome": record.final_outcome.value,
        "promise": promise,
        "stage_trace": [[idx, stage.value] for idx, stage in record.stage_trace],
        "emotion_trace": [[idx, emo.value] for idx, emo in record.emotion_trace],
        "escalation_flag": record.escalation_flag,
        "confrontation_events": [[idx, s.value] for idx, s in record.confrontation_events],
        "slot_summary": slots_to_dict(record.slot_summary),
        "rule_table_version": record.rule_table_version,
    }


def call_record_from_dict(data: Mapping) -> CallRecord:
    from .serialize import SerializationError, date_from_str, money_from_dict, slots_from_dict

    if not isinstance(data, Mapping):
        raise SerializationError("call record: expected object")
    promise_raw = data.get("promise")
    promise = None
    if promise_raw is not None:
        promise = PromiseCommitment(
            amount=money_from_dict(promise_raw["amount"]) if promise_raw.get("amount") else None,
            promised_date=(
                date_from_str(promise_raw["promised_date"]) if promise_raw.get("promised_date") else None
            ),
        )
    return CallRecord(
        conversation_id=data["conversation_id"],
        final_outcome=CallOutcome(data["final_outcome"]),
        promise=promise,
        stage_trace=tuple((idx, CallStageLabel(stage)) for idx, stage in data["stage_trace"]),
        emotion_trace=tuple((idx, EmotionLabel(emo)) for idx, emo in data["emotion_trace"]),
        escalation_flag=bool(data["escalation_flag"]),
        confrontation_events=tuple(
            (idx, SentimentLabel(s)) for idx, s in data["confrontation_events"]
        ),
        slot_summary=slots_from_dict(data.get("slot_summary")),
        rule_table_version=str(data.get("rule_table_version", "unversioned")),
    )


def call_record_to_json(record: CallRecord) -> str:
    from .serialize import canonical_json

    return canonical_json(call_record_to_dict(record))
