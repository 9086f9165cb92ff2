from __future__ import annotations

import random
from datetime import date

import pytest

from callscope.model import (
    CallStageLabel,
    Conversation,
    EmotionLabel,
    MoneyAmount,
    SentimentLabel,
    SlotValues,
    Speaker,
    Turn,
    TurnAnnotation,
    default_taxonomy,
)
from callscope.simulator import NoiseProfile, ScenarioType, generate_corpus

DEFAULT_ANN = TurnAnnotation(
    EmotionLabel.NEUTRAL, SentimentLabel.NONE, "other", CallStageLabel.OPENING
)


def make_turn(i: int, speaker: Speaker = Speaker.CUSTOMER, text: str = "a", gold=None) -> Turn:
    return Turn(turn_index=i, speaker=speaker, text=text, gold=gold)


def make_conversation(cid: str, n_turns: int, text: str = "a", with_gold: bool = False) -> Conversation:
    turns = [
        make_turn(
            i,
            Speaker.AGENT if i % 2 == 0 else Speaker.CUSTOMER,
            text,
            DEFAULT_ANN if with_gold else None,
        )
        for i in range(n_turns)
    ]
    return Conversation(cid, tuple(turns), {})


def random_annotation(rng: random.Random) -> TurnAnnotation:
    taxonomy = default_taxonomy()
    slots = SlotValues(
        customer_name=rng.choice([None, "Nguyễn Văn An", "Trần Thị Bích"]),
        total_debt=rng.choice([None, MoneyAmount(500_000), MoneyAmount(2_000_000)]),
        days_past_due=rng.choice([None, 10, 45]),
        promised_payment_date=rng.choice([None, date(2026, 3, 15)]),
        promised_payment_amount=rng.choice([None, MoneyAmount(300_000)]),
        due_date=rng.choice([None, date(2026, 2, 1)]),
        agent_name=rng.choice([None, "Lan"]),
    )
    return TurnAnnotation(
        emotion=rng.choice(list(EmotionLabel)),
        sentiment=rng.choice(list(SentimentLabel)),
        intent=rng.choice(taxonomy.labels),
        call_stage=rng.choice(list(CallStageLabel)),
        slots=slots,
    )


@pytest.fixture(scope="session")
def noisy_sim_corpus():
    """40 simulated calls across all five scenario types with nonzero noise."""
    noise = NoiseProfile(0.25, 0.15, 0.2, 0.15)
    return generate_corpus({t: 8 for t in ScenarioType}, noise, base_seed=2024)
