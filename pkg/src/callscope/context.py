"""Rolling-context inference inputs and instruction-tuning export.

A request for a target turn bundles the task instruction, the (policy-
truncated) history and the target utterance. Rendering is canonical: the same
request always renders to identical bytes, which both prompt caching and the
request fingerprint depend on.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Mapping, Optional, Sequence

from .model import Conversation, Speaker
from .serialize import annotation_to_json, canonical_json

OUTPUT_SCHEMA_VERSION = "1"

#: Versioned instruction templates. The schema keys listed here must stay in
#: sync with the parser's expectations for the matching schema version.
INSTRUCTION_TEMPLATES: dict[str, str] = {
    "v1": (
        "Analyze the target turn of this debt-collection call. Using the "
        "conversation context, produce a single JSON object with exactly these "
        "fields: emotion (neutral|negative|positive), sentiment "
        "(none|refusal|insult|threat), intent (one label from the active "
        "intent taxonomy), call_stage (opening|verification|negotiation|"
        "commitment|closure), and slots (object; only include slots stated in "
        "the target turn: agent_name, customer_name, total_debt, "
        "days_past_due, promised_payment_date, promised_payment_amount, "
        "due_date; amounts are {\"amount\": <integer minor units>, "
        "\"currency\": <ISO-4217>}; dates are YYYY-MM-DD). Output the JSON "
        "object only."
    ),
}

DEFAULT_INSTRUCTION_VERSION = "v1"


class ContextMode(str, Enum):
    FULL_HISTORY = "full_history"
    LAST_K_TURNS = "last_k_turns"
    CHAR_BUDGET = "char_budget"


@dataclass(frozen=True)
class ContextPolicy:
    mode: ContextMode
    k: Optional[int] = None
    budget_chars: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode == ContextMode.LAST_K_TURNS:
            if self.k is None or self.k < 1:
                raise ValueError("last_k_turns policy requires positive k")
            if self.budget_chars is not None:
                raise ValueError("budget_chars not allowed for last_k_turns")
        elif self.mode == ContextMode.CHAR_BUDGET:
            if self.budget_chars is None or self.budget_chars < 1:
                raise ValueError("char_budget policy requires positive budget_chars")
            if self.k is not None:
                raise ValueError("k not allowed for char_budget")
        else:
            if self.k is not None or self.budget_chars is not None:
                raise ValueError("full_history policy takes no parameters")

    def to_dict(self) -> dict:
        out: dict = {"mode": self.mode.value}
        if self.k is not None:
            out["k"] = self.k
        if self.budget_chars is not None:
            out["budget_chars"] = self.budget_chars
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ContextPolicy":
        mode = ContextMode(data["mode"])
        return cls(mode, data.get("k"), data.get("budget_chars"))


FULL_HISTORY = ContextPolicy(ContextMode.FULL_HISTORY)


@dataclass(frozen=True)
class InferenceRequest:
    """Everything a backend needs to annotate one target turn."""

    instruction: str
    instruction_version: str
    context_turns: tuple[tuple[Speaker, str], ...]
    target_turn: tuple[Speaker, str]
    output_schema_version: str = OUTPUT_SCHEMA_VERSION


def render_context_block(context_turns: Sequence[tuple[Speaker, str]]) -> str:
    return "\n".join(f"{speaker.value}: {text}" for speaker, text in context_turns)


def render_request_input(request: InferenceRequest) -> str:
    speaker, text = request.target_turn
    return (
        "### Context\n"
        f"{render_context_block(request.context_turns)}\n"
        "### Target turn\n"
        f"{speaker.value}: {text}\n"
    )


def render_request(request: InferenceRequest) -> str:
    """Full prompt text: instruction plus rendered input."""
    return f"{request.instruction}\n\n{render_request_input(request)}"


def request_fingerprint(request: InferenceRequest) -> str:
    """Stable hash of the rendered request; identical requests (including
    retries) always map to the same fingerprint."""
    payload = f"{request.output_schema_version}\0{render_request(request)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_context(
    conv: Conversation,
    target_index: int,
    policy: ContextPolicy = FULL_HISTORY,
    instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
) -> InferenceRequest:
    """Build the inference request for one target turn.

    full_history keeps every prior turn; last_k_turns keeps the most recent
    min(k, target_index); char_budget keeps the longest suffix of history
    whose rendered block fits the budget, dropping oldest turns first and
    never splitting a turn.
    """
    if target_index < 0 or target_index >= len(conv.turns):
        raise IndexError(f"target_index {target_index} out of range for {len(conv.turns)} turns")
    history = [(t.speaker, t.text) for t in conv.turns[:target_index]]
    if policy.mode == ContextMode.LAST_K_TURNS:
        history = history[-policy.k :]
    elif policy.mode == ContextMode.CHAR_BUDGET:
        budget = policy.budget_chars
        start = len(history)
        rendered_len = 0
        # grow the suffix from the newest turn backwards while it still fits
        for i in range(len(history) - 1, -1, -1):
            line_len = len(f"{history[i][0].value}: {history[i][1]}")
            candidate = rendered_len + line_len + (1 if rendered_len else 0)
            if candidate > budget:
                break
            rendered_len = candidate
            start = i
        history = history[start:]
    target = conv.turns[target_index]
    instruction = INSTRUCTION_TEMPLATES[instruction_version]
    return InferenceRequest(
        instruction=instruction,
        instruction_version=instruction_version,
        context_turns=tuple(history),
        target_turn=(target.speaker, target.text),
    )


def render_post_call_input(
    conv: Conversation, instruction_version: str = DEFAULT_INSTRUCTION_VERSION
) -> list[InferenceRequest]:
    """One full-history request per turn, in turn order (post-call workflow)."""
    return [
        build_context(conv, i, FULL_HISTORY, instruction_version)
        for i in range(len(conv.turns))
    ]


# ---------------------------------------------------------------------------
# Training export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstructionSample:
    instruction: str
    input: str
    output: str


@dataclass(frozen=True)
class LengthMixConfig:
    """Stratified subsampling over rendered-input length buckets.

    bucket_bounds are upper character bounds; an extra open-ended bucket
    catches everything above the last bound. keep_fractions must have exactly
    len(bucket_bounds) + 1 entries.
    """

    bucket_bounds: tuple[int, ...]
    keep_fractions: tuple[float, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.keep_fractions) != len(self.bucket_bounds) + 1:
            raise ValueError("need len(bucket_bounds) + 1 keep fractions")
        if any(b <= 0 for b in self.bucket_bounds) or list(self.bucket_bounds) != sorted(
            set(self.bucket_bounds)
        ):
            raise ValueError("bucket_bounds must be positive and strictly increasing")
        if any(not (0.0 <= f <= 1.0) for f in self.keep_fractions):
            raise ValueError("keep fractions must be in [0, 1]")

    def bucket_of(self, length: int) -> int:
        for i, bound in enumerate(self.bucket_bounds):
            if length <= bound:
                return i
        return len(self.bucket_bounds)


@dataclass
class ExportResult:
    samples: list[InstructionSample]
    total_turns: int
    bucket_counts: dict[int, tuple[int, int]]  # bucket -> (before, after)


class MissingGoldError(ValueError):
    pass


def export_training_triples(
    corpus: Sequence[Conversation],
    policy: ContextPolicy = FULL_HISTORY,
    mix: Optional[LengthMixConfig] = None,
    instruction_version: str = DEFAULT_INSTRUCTION_VERSION,
) -> ExportResult:
    """Export one instruction-input-output triple per (conversation, turn).

    Every turn must carry gold; the output string is the canonical
    serialization of that turn's gold annotation and parses back to it. When a
    mix config is given, samples are subsampled per length bucket and the
    before/after counts are reported in the result.
    """
    samples: list[InstructionSample] = []
    total = 0
    for conv in corpus:
        for turn in conv.turns:
            if turn.gold is None:
                raise MissingGoldError(
                    f"{conv.conversation_id}: turn {turn.turn_index} has no gold annotation"
                )
        for i, turn in enumerate(conv.turns):
            request = build_context(conv, i, policy, instruction_version)
            samples.append(
                InstructionSample(
                    instruction=request.instruction,
                    input=render_request_input(request),
                    output=annotation_to_json(turn.gold),
                )
            )
            total += 1
    if mix is None:
        return ExportResult(samples, total, {})
    rng = random.Random(mix.seed)
    by_bucket: dict[int, list[InstructionSample]] = {}
    for sample in samples:
        by_bucket.setdefault(mix.bucket_of(len(sample.input)), []).append(sample)
    kept: list[InstructionSample] = []
    counts: dict[int, tuple[int, int]] = {}
    for bucket in sorted(by_bucket):
        group = by_bucket[bucket]
        n_keep = round(len(group) * mix.keep_fractions[bucket])
        chosen = group if n_keep >= len(group) else rng.sample(group, n_keep)
        chosen_set = {id(s) for s in chosen}
        counts[bucket] = (len(group), len(chosen))
        kept.extend(s for s in group if id(s) in chosen_set)
    return ExportResult(kept, total, counts)


def write_training_file(samples: Iterable[InstructionSample], target) -> int:
    """Line-delimited export with fields instruction, input, output."""

    def _write(fh: IO[str]) -> int:
        n = 0
        for sample in samples:
            fh.write(
                canonical_json(
                    {
                        "instruction": sample.instruction,
                        "input": sample.input,
                        "output": sample.output,
                    }
                )
            )
            fh.write("\n")
            n += 1
        return n

    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", encoding="utf-8") as fh:
            return _write(fh)
    return _write(target)
