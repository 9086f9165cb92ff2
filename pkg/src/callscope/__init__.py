"""callscope: on-premise conversational intelligence for debt-collection
contact centers — simulation, turn-level annotation over pluggable backends,
call-level aggregation, training export and an evaluation harness."""

__version__ = "0.1.0"

from .model import (
    CallStageLabel,
    Conversation,
    EmotionLabel,
    IntentTaxonomy,
    MoneyAmount,
    SentimentLabel,
    SLOT_NAMES,
    SlotValues,
    Speaker,
    TASK_NAMES,
    Turn,
    TurnAnnotation,
    Violation,
    default_taxonomy,
    load_taxonomy,
    validate_annotation,
    validate_conversation,
)

__all__ = [
    "CallStageLabel",
    "Conversation",
    "EmotionLabel",
    "IntentTaxonomy",
    "MoneyAmount",
    "SLOT_NAMES",
    "SentimentLabel",
    "SlotValues",
    "Speaker",
    "TASK_NAMES",
    "Turn",
    "TurnAnnotation",
    "Violation",
    "__version__",
    "default_taxonomy",
    "load_taxonomy",
    "validate_annotation",
    "validate_conversation",
]
