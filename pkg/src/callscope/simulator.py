"""Synthetic debt-collection call generator with gold annotations.

Calls are produced from stage-scripted turn templates, so every turn's gold
annotation (labels and slots) is correct by construction: each label is
encoded by a cue phrase from the language pack's cue lexicon and each slot
value is rendered into the text in a pattern the rule oracle can re-extract.

Noise phenomena are textual transformations drawn from a fixed, documented
marker inventory (we operate post-transcription):

  * disfluency (customer turns): hesitation filler prefix ("ờ, ..."),
    repetition of the leading token, or a self-correction prefix
    ("<word>, à nhầm, <text>");
  * overlap: the ``[chồng lời]`` marker prefixed to the later turn of an
    adjacent pair;
  * fragmentation: trailing filler words are dropped and the ``[đứt quãng]``
    marker appended — truncation never reaches a template's cue-bearing core,
    so gold stays recoverable;
  * background noise: the ``[tạp âm]`` marker prefix.

All transformations prepend or truncate the expendable tail, never rewrite
the core, which is what makes the simulator the oracle-grade data source for
end-to-end tests. Generation is fully determined by (scenario, noise, seed);
per-call corpus seeds are base_seed + ordinal so any call replays in
isolation.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

from .model import (
    CallStageLabel,
    Conversation,
    EmotionLabel,
    MoneyAmount,
    SentimentLabel,
    SlotValues,
    Speaker,
    Turn,
    TurnAnnotation,
)


class ScenarioType(str, Enum):
    COOPERATIVE = "cooperative"
    RESISTANCE = "resistance"
    NEGOTIATION = "negotiation"
    DEFERMENT = "deferment"
    PAYMENT_COMMITMENT = "payment_commitment"


#: Documented scenario -> expected call outcome map (gold aggregation target).
SCENARIO_EXPECTED_OUTCOME: dict[ScenarioType, str] = {
    ScenarioType.COOPERATIVE: "payment_committed",
    ScenarioType.RESISTANCE: "refused",
    ScenarioType.NEGOTIATION: "payment_committed",
    ScenarioType.DEFERMENT: "deferred",
    ScenarioType.PAYMENT_COMMITMENT: "payment_committed",
}


class PackError(ValueError):
    """Raised when a language pack is missing required material."""


@dataclass(frozen=True)
class TurnTemplate:
    template_id: str
    role: Speaker
    text: str
    tail: str
    emotion: EmotionLabel = EmotionLabel.NEUTRAL
    sentiment: SentimentLabel = SentimentLabel.NONE
    intent: str = "other"
    slots: tuple[str, ...] = ()


@dataclass(frozen=True)
class LanguagePack:
    """Swappable template/cue bundle; the engine itself is language-agnostic."""

    pack_id: str
    version: str
    markers: Mapping[str, str]
    hesitation_fillers: tuple[str, ...]
    correction_phrase: str
    agent_names: tuple[str, ...]
    customer_names: tuple[str, ...]
    debt_amounts: tuple[int, ...]
    days_past_due_range: tuple[int, int]
    due_year: int
    promise_offset_days: tuple[int, int]
    cues: Mapping[str, Mapping[str, tuple[str, ...]]]
    slot_rules: Mapping[str, object]
    templates: Mapping[str, TurnTemplate]
    fillers: Mapping[str, tuple[str, ...]]
    beats: Mapping[str, Mapping[str, tuple[tuple[str, ...], ...]]]
    extras: Mapping[str, Mapping[str, Mapping[str, tuple[str, ...]]]]

    def template(self, template_id: str) -> TurnTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise PackError(f"pack {self.pack_id} has no template {template_id!r}") from None

    def beats_for(self, scenario: ScenarioType, stage: CallStageLabel) -> tuple[tuple[str, ...], ...]:
        try:
            return self.beats[scenario.value][stage.value]
        except KeyError:
            raise PackError(
                f"pack {self.pack_id} lacks templates for scenario {scenario.value!r} "
                f"stage {stage.value!r}"
            ) from None

    def extras_for(self, scenario: ScenarioType, stage: CallStageLabel, role: Speaker) -> tuple[str, ...]:
        pool = (
            self.extras.get(scenario.value, {})
            .get(stage.value, {})
            .get(role.value)
        )
        if pool:
            return pool
        return self.fillers[role.value]


def _load_json(source: Union[str, Path, Mapping]) -> Mapping:
    if isinstance(source, Mapping):
        return source
    with open(source, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_pack(source: Union[str, Path, Mapping]) -> LanguagePack:
    doc = _load_json(source)
    templates: dict[str, TurnTemplate] = {}
    for tid, raw in doc["turn_templates"].items():
        templates[tid] = TurnTemplate(
            template_id=tid,
            role=Speaker(raw["role"]),
            text=raw["text"],
            tail=raw.get("tail", ""),
            emotion=EmotionLabel(raw.get("emotion", "neutral")),
            sentiment=SentimentLabel(raw.get("sentiment", "none")),
            intent=raw.get("intent", "other"),
            slots=tuple(raw.get("slots", ())),
        )
    beats: dict[str, dict[str, tuple[tuple[str, ...], ...]]] = {}
    default = doc.get("beats_default", {})
    overrides = doc.get("beats_overrides", {})
    for scenario in ScenarioType:
        merged = dict(default)
        merged.update(overrides.get(scenario.value, {}))
        beats[scenario.value] = {
            stage: tuple(tuple(variant) for variant in beat_list)
            for stage, beat_list in merged.items()
        }
    cues = {
        task: {label: tuple(phrases) for label, phrases in table.items()}
        for task, table in doc["cues"].items()
    }
    extras = {
        scenario: {
            stage: {role: tuple(ids) for role, ids in by_role.items()}
            for stage, by_role in by_stage.items()
        }
        for scenario, by_stage in doc.get("extras", {}).items()
    }
    pack = LanguagePack(
        pack_id=doc["pack_id"],
        version=str(doc.get("version", "unversioned")),
        markers=dict(doc["markers"]),
        hesitation_fillers=tuple(doc["hesitation_fillers"]),
        correction_phrase=doc["correction_phrase"],
        agent_names=tuple(doc["agent_names"]),
        customer_names=tuple(doc["customer_names"]),
        debt_amounts=tuple(doc["debt_amounts"]),
        days_past_due_range=tuple(doc["days_past_due_range"]),
        due_year=int(doc["due_year"]),
        promise_offset_days=tuple(doc["promise_offset_days"]),
        cues=cues,
        slot_rules=dict(doc["slot_rules"]),
        templates=templates,
        fillers={role: tuple(ids) for role, ids in doc["fillers"].items()},
        beats=beats,
        extras=extras,
    )
    for scenario in ScenarioType:
        for stage in CallStageLabel:
            for variants in pack.beats_for(scenario, stage):
                for tid in variants:
                    pack.template(tid)
    return pack


_DEFAULT_PACK: Optional[LanguagePack] = None


def default_pack() -> LanguagePack:
    global _DEFAULT_PACK
    if _DEFAULT_PACK is None:
        ref = resources.files("callscope.data").joinpath("packs/vi_default.json")
        _DEFAULT_PACK = load_pack(json.loads(ref.read_text(encoding="utf-8")))
    return _DEFAULT_PACK


# ---------------------------------------------------------------------------
# Scenario and noise definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Persona:
    """Call parameters a scenario is instantiated with. Gold slot values are
    drawn from here, which is what gold-consistency checks compare against."""

    customer_name: str
    agent_name: str
    debt: MoneyAmount
    days_past_due: int
    due_date: date
    promise_amount: MoneyAmount
    promise_date: date


@dataclass(frozen=True)
class StageStep:
    stage: CallStageLabel
    min_turns: int
    max_turns: int


@dataclass(frozen=True)
class Scenario:
    scenario_type: ScenarioType
    persona: Persona
    stage_script: tuple[StageStep, ...]
    language_pack: str = "vi-default"

    def __post_init__(self) -> None:
        if not self.stage_script:
            raise ValueError("stage_script must be non-empty")
        if self.stage_script[0].stage != CallStageLabel.OPENING:
            raise ValueError("stage_script must begin with opening")
        for step in self.stage_script:
            if step.min_turns < 1 or step.min_turns > step.max_turns:
                raise ValueError(f"bad turn bounds for stage {step.stage.value}")


@dataclass(frozen=True)
class NoiseProfile:
    disfluency_rate: float = 0.0
    overlap_rate: float = 0.0
    fragment_rate: float = 0.0
    noise_marker_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("disfluency_rate", "overlap_rate", "fragment_rate", "noise_marker_rate"):
            rate = getattr(self, name)
            if not (0.0 <= rate <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {rate}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseProfile":
        return cls(
            disfluency_rate=float(data.get("disfluency_rate", 0.0)),
            overlap_rate=float(data.get("overlap_rate", 0.0)),
            fragment_rate=float(data.get("fragment_rate", 0.0)),
            noise_marker_rate=float(data.get("noise_marker_rate", 0.0)),
        )


NO_NOISE = NoiseProfile()


def load_noise_profile(source: Union[str, Path, Mapping]) -> NoiseProfile:
    return NoiseProfile.from_dict(_load_json(source))


def default_noise_profile() -> NoiseProfile:
    ref = resources.files("callscope.data").joinpath("noise_default.json")
    return NoiseProfile.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def load_stage_scripts(source: Union[str, Path, Mapping, None] = None) -> dict[ScenarioType, tuple[StageStep, ...]]:
    if source is None:
        ref = resources.files("callscope.data").joinpath("scenarios_default.json")
        doc = json.loads(ref.read_text(encoding="utf-8"))
    else:
        doc = _load_json(source)
    out: dict[ScenarioType, tuple[StageStep, ...]] = {}
    for name, steps in doc["stage_scripts"].items():
        out[ScenarioType(name)] = tuple(
            StageStep(CallStageLabel(stage), int(mn), int(mx)) for stage, mn, mx in steps
        )
    return out


@dataclass(frozen=True)
class SimulatedCall:
    conversation: Conversation
    scenario: Scenario
    seed: int


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------


def format_amount(amount: int) -> str:
    """Vietnamese thousands-dot rendering: 2000000 -> '2.000.000'."""
    return f"{amount:,}".replace(",", ".")


def format_date(value: date) -> str:
    return value.strftime("%d/%m/%Y")


def inject_noise(
    text: str,
    noise: NoiseProfile,
    rng: random.Random,
    *,
    pack: Optional[LanguagePack] = None,
    speaker: Speaker = Speaker.CUSTOMER,
    protected_prefix_words: int = 0,
    eligible_overlap: bool = True,
) -> str:
    """Apply the documented noise phenomena to one utterance.

    Random draws happen in a fixed order (fragment, disfluency, overlap,
    noise marker) so a shared rng stream stays reproducible. With all rates
    zero the text is returned unchanged. Fragmentation keeps at least
    max(protected_prefix_words, half the words) and always drops at least one
    word, appending the fragment marker; when nothing is droppable it is
    skipped.
    """
    if not text:
        raise ValueError("text must be non-empty")
    pack = pack if pack is not None else default_pack()
    out = text

    if noise.fragment_rate > 0 and rng.random() < noise.fragment_rate:
        words = out.split()
        lower = max(protected_prefix_words, (len(words) + 1) // 2, 1)
        if lower <= len(words) - 1:
            keep = rng.randint(lower, len(words) - 1)
            out = " ".join(words[:keep]) + " " + pack.markers["fragment"]

    if speaker == Speaker.CUSTOMER and noise.disfluency_rate > 0 and rng.random() < noise.disfluency_rate:
        kind = rng.choice(("hesitation", "repetition", "correction"))
        if kind == "hesitation":
            filler = rng.choice(pack.hesitation_fillers)
            out = f"{filler}, {out}"
        elif kind == "repetition":
            out = f"{out.split()[0]} {out}"
        else:
            out = f"{out.split()[0]}, {pack.correction_phrase}, {out}"

    if eligible_overlap and noise.overlap_rate > 0 and rng.random() < noise.overlap_rate:
        out = f"{pack.markers['overlap']} {out}"

    if noise.noise_marker_rate > 0 and rng.random() < noise.noise_marker_rate:
        out = f"{pack.markers['noise']} {out}"

    return out


_BRACKET_PREFIX = re.compile(r"^(\[[^\]]+\]\s*)+")


def _strip_marker_prefix(text: str, pack: LanguagePack) -> str:
    return _BRACKET_PREFIX.sub("", text)


def has_overlap_marker(text: str, pack: Optional[LanguagePack] = None) -> bool:
    pack = pack if pack is not None else default_pack()
    return pack.markers["overlap"] in text


def has_noise_marker(text: str, pack: Optional[LanguagePack] = None) -> bool:
    pack = pack if pack is not None else default_pack()
    return pack.markers["noise"] in text


def has_fragment_marker(text: str, pack: Optional[LanguagePack] = None) -> bool:
    pack = pack if pack is not None else default_pack()
    return pack.markers["fragment"] in text


def has_disfluency(text: str, pack: Optional[LanguagePack] = None) -> bool:
    pack = pack if pack is not None else default_pack()
    stripped = _strip_marker_prefix(text, pack)
    for filler in pack.hesitation_fillers:
        if stripped.startswith(f"{filler}, "):
            return True
    if f", {pack.correction_phrase}, " in stripped:
        return True
    tokens = stripped.split()
    return len(tokens) >= 2 and tokens[0] == tokens[1]


def has_any_noise_phenomenon(text: str, pack: Optional[LanguagePack] = None) -> bool:
    return (
        has_overlap_marker(text, pack)
        or has_noise_marker(text, pack)
        or has_fragment_marker(text, pack)
        or has_disfluency(text, pack)
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def sample_persona(scenario_type: ScenarioType, rng: random.Random, pack: Optional[LanguagePack] = None) -> Persona:
    """Draw call parameters. The negotiation scenario commits to half the debt
    (the negotiated figure); every other committing scenario promises it all."""
    pack = pack if pack is not None else default_pack()
    debt_amount = rng.choice(pack.debt_amounts)
    due = date(pack.due_year, rng.randint(1, 12), rng.randint(1, 28))
    promise_offset = rng.randint(*pack.promise_offset_days)
    promise_amount = debt_amount // 2 if scenario_type == ScenarioType.NEGOTIATION else debt_amount
    return Persona(
        customer_name=rng.choice(pack.customer_names),
        agent_name=rng.choice(pack.agent_names),
        debt=MoneyAmount(debt_amount),
        days_past_due=rng.randint(*pack.days_past_due_range),
        due_date=due,
        promise_amount=MoneyAmount(promise_amount),
        promise_date=due + timedelta(days=promise_offset),
    )


def _render_template(template: TurnTemplate, persona: Persona) -> tuple[str, SlotValues, int]:
    values = {
        "agent_name": persona.agent_name,
        "customer_name": persona.customer_name,
        "debt": format_amount(persona.debt.amount),
        "dpd": str(persona.days_past_due),
        "due_date": format_date(persona.due_date),
        "promise_amount": format_amount(persona.promise_amount.amount),
        "promise_date": format_date(persona.promise_date),
    }
    core = template.text.format(**values)
    text = f"{core} {template.tail}" if template.tail else core
    slot_values = {
        "agent_name": persona.agent_name,
        "customer_name": persona.customer_name,
        "total_debt": persona.debt,
        "days_past_due": persona.days_past_due,
        "due_date": persona.due_date,
        "promised_payment_amount": persona.promise_amount,
        "promised_payment_date": persona.promise_date,
    }
    slots = SlotValues(**{name: slot_values[name] for name in template.slots})
    return text, slots, len(core.split())


def generate(scenario: Scenario, noise: NoiseProfile, seed: int, pack: Optional[LanguagePack] = None) -> SimulatedCall:
    """Deterministically generate one call with gold on every turn."""
    pack = pack if pack is not None else default_pack()
    rng = random.Random(seed)
    persona = scenario.persona

    turns: list[Turn] = []
    clock_ms = 0
    index = 0
    for step in scenario.stage_script:
        n_turns = rng.randint(step.min_turns, step.max_turns)
        beats = pack.beats_for(scenario.scenario_type, step.stage)
        last_role: Optional[Speaker] = None
        for position in range(n_turns):
            if position < len(beats):
                template = pack.template(rng.choice(beats[position]))
            else:
                role = Speaker.AGENT if last_role == Speaker.CUSTOMER else Speaker.CUSTOMER
                pool = pack.extras_for(scenario.scenario_type, step.stage, role)
                template = pack.template(rng.choice(pool))
            last_role = template.role
            raw_text, slots, core_words = _render_template(template, persona)
            text = inject_noise(
                raw_text,
                noise,
                rng,
                pack=pack,
                speaker=template.role,
                protected_prefix_words=core_words,
                eligible_overlap=index > 0,
            )
            gold = TurnAnnotation(
                emotion=template.emotion,
                sentiment=template.sentiment,
                intent=template.intent,
                call_stage=step.stage,
                slots=slots,
            )
            duration = 700 + 55 * len(text.split())
            turns.append(
                Turn(
                    turn_index=index,
                    speaker=template.role,
                    text=text,
                    start_ms=clock_ms,
                    end_ms=clock_ms + duration,
                    gold=gold,
                )
            )
            clock_ms += duration + 150
            index += 1

    conversation = Conversation(
        conversation_id=f"sim-{scenario.scenario_type.value}-{seed:x}",
        turns=tuple(turns),
        metadata={
            "scenario": scenario.scenario_type.value,
            "language": "vi",
            "source": "simulator",
            "pack": pack.pack_id,
            "seed": str(seed),
        },
    )
    return SimulatedCall(conversation=conversation, scenario=scenario, seed=seed)


def corpus_call(
    scenario_type: ScenarioType,
    noise: NoiseProfile,
    base_seed: int,
    ordinal: int,
    stage_scripts: Optional[Mapping[ScenarioType, tuple[StageStep, ...]]] = None,
    pack: Optional[LanguagePack] = None,
) -> SimulatedCall:
    """Reproduce corpus call #ordinal in isolation: the per-call seed is
    base_seed + ordinal and the persona is drawn from its own seeded stream."""
    pack = pack if pack is not None else default_pack()
    scripts = stage_scripts if stage_scripts is not None else load_stage_scripts()
    seed = base_seed + ordinal
    persona = sample_persona(scenario_type, random.Random(f"persona:{seed}"), pack)
    scenario = Scenario(scenario_type, persona, scripts[scenario_type], pack.pack_id)
    return generate(scenario, noise, seed, pack)


def generate_corpus(
    counts: Mapping[Union[ScenarioType, str], int],
    noise: NoiseProfile,
    base_seed: int,
    stage_scripts: Optional[Mapping[ScenarioType, tuple[StageStep, ...]]] = None,
    pack: Optional[LanguagePack] = None,
) -> list[SimulatedCall]:
    """Generate sum(counts) calls; scenario types are iterated in enum order
    and the global ordinal dictates each call's derived seed."""
    pack = pack if pack is not None else default_pack()
    scripts = stage_scripts if stage_scripts is not None else load_stage_scripts()
    normalized: dict[ScenarioType, int] = {}
    for key, count in counts.items():
        if count < 0:
            raise ValueError("counts must be non-negative")
        normalized[ScenarioType(key)] = count
    calls: list[SimulatedCall] = []
    ordinal = 0
    for scenario_type in ScenarioType:
        for _ in range(normalized.get(scenario_type, 0)):
            calls.append(corpus_call(scenario_type, noise, base_seed, ordinal, scripts, pack))
            ordinal += 1
    return calls
