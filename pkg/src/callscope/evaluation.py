"""Evaluation protocol: leakage-free splits, corpus statistics, per-task
accuracy, entity-level slot accuracy, macro averages, inter-annotator
agreement and the end-to-end eval harness.

Scoring policy decisions (recorded in every report):
  * a turn whose prediction failed to parse counts as wrong on all four
    tasks — excluding failures would inflate accuracy;
  * entity accuracy is scored only over turns where gold or prediction has
    the slot non-null; both-null turns leave the denominator, and an empty
    denominator reports not-applicable rather than a fake 1.0.

Internally counts stay exact integers / fractions; rounding is half-up and
happens at presentation time only.
"""

from __future__ import annotations

import json
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .aggregation import CallRecord, aggregate_call
from .backends.base import AnnotatorBackend, BackendUnavailable
from .context import (
    ContextPolicy,
    DEFAULT_INSTRUCTION_VERSION,
    FULL_HISTORY,
    build_context,
    request_fingerprint,
)
from .model import (
    Conversation,
    MoneyAmount,
    SLOT_NAMES,
    TASK_NAMES,
    TurnAnnotation,
)
from .serialize import canonical_json

# ---------------------------------------------------------------------------
# Rounding helpers (half-up, presentation only)
# ---------------------------------------------------------------------------


def round_half_up(value: Union[float, Fraction, int], digits: int) -> float:
    if isinstance(value, Fraction):
        dec = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        dec = Decimal(str(value))
    quantum = Decimal(1).scaleb(-digits)
    return float(dec.quantize(quantum, rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Conversation-level split: whole calls only, so no dialogue leaks
    between partitions."""

    train_fraction: Fraction
    seed: int

    def __post_init__(self) -> None:
        frac = self.train_fraction
        if not isinstance(frac, Fraction):
            frac = Fraction(str(frac))
            object.__setattr__(self, "train_fraction", frac)
        if not (0 < frac < 1):
            raise ValueError("train_fraction must be in (0, 1)")


class SplitError(ValueError):
    pass


def split_corpus(
    corpus: Sequence[Conversation], spec: SplitSpec
) -> tuple[list[Conversation], list[Conversation]]:
    """Deterministic disjoint/exhaustive split at conversation granularity.

    |train| = round-half-up(train_fraction * |corpus|); both sides must end
    up non-empty or the corpus is too small for the requested fraction.
    """
    if len(corpus) < 2:
        raise SplitError("corpus too small: need at least 2 conversations")
    ids = [conv.conversation_id for conv in corpus]
    if len(set(ids)) != len(ids):
        raise SplitError("conversation_ids must be unique within a corpus")
    order = sorted(range(len(corpus)), key=lambda i: ids[i])
    random.Random(spec.seed).shuffle(order)
    n_train = int((spec.train_fraction * len(corpus)) + Fraction(1, 2))
    if n_train == 0 or n_train == len(corpus):
        raise SplitError(
            f"corpus too small: {len(corpus)} conversations at {spec.train_fraction} "
            "leaves an empty split"
        )
    train_positions = set(order[:n_train])
    train = [conv for i, conv in enumerate(corpus) if i in train_positions]
    valid = [conv for i, conv in enumerate(corpus) if i not in train_positions]
    return train, valid


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    n_conversations: int
    n_turns: int
    turns_per_conversation: float  # mean, half-up to 1 decimal

    def to_dict(self) -> dict:
        return {
            "n_conversations": self.n_conversations,
            "n_turns": self.n_turns,
            "turns_per_conversation": self.turns_per_conversation,
        }


def corpus_stats(corpus: Sequence[Conversation]) -> CorpusStats:
    n_conv = len(corpus)
    n_turns = sum(len(conv.turns) for conv in corpus)
    mean = round_half_up(Fraction(n_turns, n_conv), 1) if n_conv else 0.0
    return CorpusStats(n_conv, n_turns, mean)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _task_value(ann: TurnAnnotation, task: str) -> object:
    if task == "emotion":
        return ann.emotion
    if task == "sentiment":
        return ann.sentiment
    if task == "intent":
        return ann.intent
    if task == "call_stage":
        return ann.call_stage
    raise KeyError(f"unknown task {task!r}")


def classification_accuracy(
    pred: Sequence[Optional[TurnAnnotation]],
    gold: Sequence[TurnAnnotation],
    task: str,
) -> Fraction:
    """Exact-match fraction over aligned turns; None predictions (parse
    failures) count as wrong."""
    if len(pred) != len(gold):
        raise ValueError(f"pred/gold length mismatch: {len(pred)} vs {len(gold)}")
    if not gold:
        raise ValueError("cannot score an empty sequence")
    correct = sum(
        1
        for p, g in zip(pred, gold)
        if p is not None and _task_value(p, task) == _task_value(g, task)
    )
    return Fraction(correct, len(gold))


def normalize_name(value: str) -> str:
    return " ".join(value.split()).casefold()


def normalize_slot_value(slot: str, value: object) -> object:
    """Normalization applied before exact-match comparison: case/whitespace
    folding for names, minor-unit integers for amounts, ISO dates.

    Accepts already-typed values as well as the string/number shapes the
    repair pipeline coerces, so the scorer is usable on raw slot dumps too.
    """
    if value is None:
        return None
    if slot in ("agent_name", "customer_name"):
        return normalize_name(str(value))
    if slot in ("total_debt", "promised_payment_amount"):
        if isinstance(value, MoneyAmount):
            return (value.amount, value.currency)
        if isinstance(value, Mapping):
            return (int(value["amount"]), value.get("currency", "VND"))
        if isinstance(value, int):
            return (value, "VND")
        if isinstance(value, str):
            digits = value.replace(".", "").replace(",", "").strip()
            return (int(digits), "VND")
        raise ValueError(f"{slot}: cannot normalize {value!r}")
    if slot in ("promised_payment_date", "due_date"):
        if isinstance(value, str):
            from .backends.parsing import normalize_date_string

            parsed = normalize_date_string(value)
            if parsed is None:
                raise ValueError(f"{slot}: cannot normalize {value!r}")
            return parsed[0].isoformat()
        return value.isoformat()
    if slot == "days_past_due":
        return int(value)
    raise KeyError(f"unknown slot {slot!r}")


def entity_accuracy(
    pred: Sequence[Optional[TurnAnnotation]],
    gold: Sequence[TurnAnnotation],
    slot: str,
) -> Optional[Fraction]:
    """Entity-level accuracy for one slot. Scored over turns where gold or
    prediction carries the slot; returns None (not-applicable) when no turn
    does. A parse-failed prediction contributes a null slot value: wrong
    where gold has the slot, excluded where gold is null too.
    """
    if slot not in SLOT_NAMES:
        raise KeyError(f"unknown slot {slot!r}")
    if len(pred) != len(gold):
        raise ValueError(f"pred/gold length mismatch: {len(pred)} vs {len(gold)}")
    matches = 0
    applicable = 0
    for p, g in zip(pred, gold):
        g_value = getattr(g.slots, slot)
        p_value = getattr(p.slots, slot) if p is not None else None
        if g_value is None and p_value is None:
            continue
        applicable += 1
        if (
            g_value is not None
            and p_value is not None
            and normalize_slot_value(slot, p_value) == normalize_slot_value(slot, g_value)
        ):
            matches += 1
    if applicable == 0:
        return None
    return Fraction(matches, applicable)


def macro_average(per_task_accuracy: Mapping[str, Union[float, Fraction]]) -> float:
    """Unweighted mean of the four task accuracies, half-up to 2 decimals."""
    missing = set(TASK_NAMES) - set(per_task_accuracy)
    if missing:
        raise ValueError(f"missing tasks {sorted(missing)}")
    total = Fraction(0)
    for task in TASK_NAMES:
        value = per_task_accuracy[task]
        total += value if isinstance(value, Fraction) else Fraction(str(value))
    return round_half_up(total / len(TASK_NAMES), 2)


def cohen_kappa(
    annotator_a: Sequence[object], annotator_b: Sequence[object]
) -> Optional[float]:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e) with chance agreement from the
    two annotators' marginal label frequencies.

    Degenerate case p_e == 1 (both annotators constant on the same label):
    kappa is 1.0 if they agree everywhere, otherwise undefined (None).
    """
    if len(annotator_a) != len(annotator_b):
        raise ValueError("annotator sequences must align")
    n = len(annotator_a)
    if n == 0:
        raise ValueError("cannot compute agreement over zero items")
    p_o = Fraction(sum(1 for a, b in zip(annotator_a, annotator_b) if a == b), n)
    counts_a: dict[object, int] = {}
    counts_b: dict[object, int] = {}
    for a in annotator_a:
        counts_a[a] = counts_a.get(a, 0) + 1
    for b in annotator_b:
        counts_b[b] = counts_b.get(b, 0) + 1
    p_e = Fraction(0)
    for label, count_a in counts_a.items():
        count_b = counts_b.get(label, 0)
        p_e += Fraction(count_a, n) * Fraction(count_b, n)
    if p_e == 1:
        return 1.0 if p_o == 1 else None
    return float((p_o - p_e) / (1 - p_e))


# ---------------------------------------------------------------------------
# Annotation cache
# ---------------------------------------------------------------------------


class AnnotationCache:
    """Fingerprint-keyed raw-output cache; optionally file-backed (JSONL) so
    long eval runs resume instead of re-querying the backend."""

    def __init__(self, path: Optional[Union[str, Path]] = None) -> None:
        self._path = Path(path) if path is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            with open(self._path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                        self._entries[entry["fingerprint"]] = entry["text"]
                    except (json.JSONDecodeError, KeyError):
                        continue  # tolerate a torn trailing write

    def get(self, fingerprint: str) -> Optional[str]:
        with self._lock:
            return self._entries.get(fingerprint)

    def put(self, fingerprint: str, text: str) -> None:
        with self._lock:
            if fingerprint in self._entries:
                return
            self._entries[fingerprint] = text
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(canonical_json({"fingerprint": fingerprint, "text": text}))
                    fh.write("\n")

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# Eval report
# ---------------------------------------------------------------------------

REPORT_VERSION = "1"

PARSE_FAILURE_POLICY = "parse failures scored as wrong on all tasks"
NULL_SLOT_POLICY = "both-null slot turns excluded from entity denominators"


@dataclass
class EvalReport:
    backend: str
    context_policy: dict
    instruction_version: str
    schema_version: str
    taxonomy_hash: str
    n_conversations: int
    n_turns: int
    annotated_turns: int
    parse_failures: int
    per_task_counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    per_slot_counts: dict[str, Optional[tuple[int, int]]] = field(default_factory=dict)
    policy_notes: tuple[str, ...] = (PARSE_FAILURE_POLICY, NULL_SLOT_POLICY)

    @property
    def per_task_accuracy(self) -> dict[str, Fraction]:
        return {
            task: Fraction(correct, total)
            for task, (correct, total) in self.per_task_counts.items()
        }

    @property
    def per_slot_accuracy(self) -> dict[str, Optional[Fraction]]:
        out: dict[str, Optional[Fraction]] = {}
        for slot, counts in self.per_slot_counts.items():
            out[slot] = Fraction(counts[0], counts[1]) if counts is not None else None
        return out

    @property
    def macro_average(self) -> float:
        return macro_average(self.per_task_accuracy)

    @property
    def parse_failure_rate(self) -> Fraction:
        return Fraction(self.parse_failures, self.n_turns) if self.n_turns else Fraction(0)

    @property
    def coverage(self) -> Fraction:
        return Fraction(self.annotated_turns, self.n_turns) if self.n_turns else Fraction(0)

    def to_dict(self) -> dict:
        per_task = {
            task: float(acc) for task, acc in sorted(self.per_task_accuracy.items())
        }
        per_slot = {
            slot: (float(acc) if acc is not None else None)
            for slot, acc in sorted(self.per_slot_accuracy.items())
        }
        return {
            "report_version": REPORT_VERSION,
            "backend": self.backend,
            "context_policy": self.context_policy,
            "instruction_version": self.instruction_version,
            "schema_version": self.schema_version,
            "taxonomy_hash": self.taxonomy_hash,
            "n_conversations": self.n_conversations,
            "n_turns": self.n_turns,
            "annotated_turns": self.annotated_turns,
            "coverage": float(self.coverage),
            "parse_failures": self.parse_failures,
            "parse_failure_rate": float(self.parse_failure_rate),
            "per_task_counts": {t: list(c) for t, c in sorted(self.per_task_counts.items())},
            "per_task_accuracy": per_task,
            "macro_average": self.macro_average,
            "per_slot_counts": {
                s: (list(c) if c is not None else None)
                for s, c in sorted(self.per_slot_counts.items())
            },
            "per_slot_accuracy": per_slot,
            "policy_notes": list(self.policy_notes),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


# ---------------------------------------------------------------------------
# Eval harness
# ---------------------------------------------------------------------------


class EvalInputError(ValueError):
    pass


def run_eval(
    backend: AnnotatorBackend,
    corpus: Sequence[Conversation],
    policy: ContextPolicy = FULL_HISTORY,
    instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
    cache: Optional[AnnotationCache] = None,
    max_in_flight: int = 1,
) -> EvalReport:
    """Annotate every turn through the context engine + backend, score all
    tasks and slots, and emit a deterministic report.

    Backend calls run through the fingerprint cache (resumable). When a
    request exhausts the backend, the turn is left uncovered: it scores as a
    parse failure and the report's coverage and policy notes say so.
    Concurrency never affects the report: results are assembled by index.
    """
    from .backends.parsing import parse_structured_output

    for conv in corpus:
        for turn in conv.turns:
            if turn.gold is None:
                raise EvalInputError(
                    f"{conv.conversation_id}: turn {turn.turn_index} lacks gold"
                )

    jobs: list[tuple[Conversation, int]] = [
        (conv, i) for conv in corpus for i in range(len(conv.turns))
    ]
    texts: list[Optional[str]] = [None] * len(jobs)

    def fetch(job_index: int) -> None:
        conv, turn_index = jobs[job_index]
        request = build_context(conv, turn_index, policy, instruction_version)
        fingerprint = request_fingerprint(request)
        cached = cache.get(fingerprint) if cache is not None else None
        if cached is not None:
            texts[job_index] = cached
            return
        try:
            raw = backend.complete(request)
        except BackendUnavailable:
            return  # texts[job_index] stays None: the turn is uncovered
        texts[job_index] = raw.text
        if cache is not None:
            cache.put(fingerprint, raw.text)

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            list(pool.map(fetch, range(len(jobs))))
    else:
        for i in range(len(jobs)):
            fetch(i)
    transport_failures = sum(1 for t in texts if t is None)

    preds: list[Optional[TurnAnnotation]] = []
    golds: list[TurnAnnotation] = []
    parse_failures = 0
    annotated = 0
    for (conv, turn_index), text in zip(jobs, texts):
        golds.append(conv.turns[turn_index].gold)
        if text is None:
            preds.append(None)
            parse_failures += 1
            continue
        annotated += 1
        outcome = parse_structured_output(text, "1", backend.taxonomy)
        if outcome.ok:
            preds.append(outcome.annotation)
        else:
            preds.append(None)
            parse_failures += 1

    per_task_counts = {
        task: (
            sum(
                1
                for p, g in zip(preds, golds)
                if p is not None and _task_value(p, task) == _task_value(g, task)
            ),
            len(golds),
        )
        for task in TASK_NAMES
    }
    per_slot_counts: dict[str, Optional[tuple[int, int]]] = {}
    for slot in SLOT_NAMES:
        matches = 0
        applicable = 0
        for p, g in zip(preds, golds):
            g_value = getattr(g.slots, slot)
            p_value = getattr(p.slots, slot) if p is not None else None
            if g_value is None and p_value is None:
                continue
            applicable += 1
            if (
                g_value is not None
                and p_value is not None
                and normalize_slot_value(slot, p_value) == normalize_slot_value(slot, g_value)
            ):
                matches += 1
        per_slot_counts[slot] = (matches, applicable) if applicable else None

    notes = [PARSE_FAILURE_POLICY, NULL_SLOT_POLICY]
    if transport_failures:
        notes.append(
            f"partial run: {transport_failures} turns uncovered (backend unavailable)"
        )
    return EvalReport(
        backend=backend.identity,
        context_policy=policy.to_dict(),
        instruction_version=instruction_version,
        schema_version="1",
        taxonomy_hash=backend.taxonomy.content_hash,
        n_conversations=len(corpus),
        n_turns=len(jobs),
        annotated_turns=annotated,
        parse_failures=parse_failures,
        per_task_counts=per_task_counts,
        per_slot_counts=per_slot_counts,
        policy_notes=tuple(notes),
    )


def annotate_corpus(
    backend: AnnotatorBackend,
    corpus: Sequence[Conversation],
    policy: ContextPolicy = FULL_HISTORY,
    instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
    cache: Optional[AnnotationCache] = None,
) -> list[list[Optional[TurnAnnotation]]]:
    """Per-conversation prediction lists (None = failed turn), the shared
    building block for batch annotation and eval."""
    from .backends.parsing import parse_structured_output

    out: list[list[Optional[TurnAnnotation]]] = []
    for conv in corpus:
        per_turn: list[Optional[TurnAnnotation]] = []
        for i in range(len(conv.turns)):
            request = build_context(conv, i, policy, instruction_version)
            fingerprint = request_fingerprint(request)
            text = cache.get(fingerprint) if cache is not None else None
            if text is None:
                try:
                    raw = backend.complete(request)
                except BackendUnavailable:
                    per_turn.append(None)
                    continue
                text = raw.text
                if cache is not None:
                    cache.put(fingerprint, text)
            outcome = parse_structured_output(text, "1", backend.taxonomy)
            per_turn.append(outcome.annotation if outcome.ok else None)
        out.append(per_turn)
    return out


# ---------------------------------------------------------------------------
# Comparison table
# ---------------------------------------------------------------------------


def comparison_table(reports: Mapping[str, EvalReport]) -> str:
    """Side-by-side text tables (classification tasks + slots) in the familiar
    task-rows-by-backend-columns layout."""
    names = list(reports)
    task_labels = {
        "emotion": "Emotion",
        "sentiment": "Sentiment",
        "intent": "Intent",
        "call_stage": "Call Stage",
    }
    width = max([12] + [len(n) for n in names]) + 2
    lines = ["Task".ljust(24) + "".join(n.rjust(width) for n in names)]
    for task in TASK_NAMES:
        row = task_labels[task].ljust(24)
        for name in names:
            acc = reports[name].per_task_accuracy[task]
            row += f"{round_half_up(acc, 2):.2f}".rjust(width)
        lines.append(row)
    row = "All Tasks(avg)".ljust(24)
    for name in names:
        row += f"{reports[name].macro_average:.2f}".rjust(width)
    lines.append(row)
    lines.append("")
    lines.append("Slot".ljust(24) + "".join(n.rjust(width) for n in names))
    for slot in SLOT_NAMES:
        row = slot.ljust(24)
        for name in names:
            acc = reports[name].per_slot_accuracy.get(slot)
            row += ("n/a" if acc is None else f"{round_half_up(acc, 2):.2f}").rjust(width)
        lines.append(row)
    return "\n".join(lines)


def batch_call_records(
    corpus: Sequence[Conversation],
    predictions: Sequence[Sequence[Optional[TurnAnnotation]]],
) -> list[CallRecord]:
    return [aggregate_call(conv, preds) for conv, preds in zip(corpus, predictions)]
