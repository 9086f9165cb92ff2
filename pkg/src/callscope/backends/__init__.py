from .base import (
    AnnotateOutcome,
    AnnotatorBackend,
    BackendCapabilities,
    BackendUnavailable,
    RawModelOutput,
)
from .llm import ChatCompletionsBackend, ChatEndpointConfig, load_endpoint_config
from .oracle import OracleBackend, RuleOracle, rule_oracle_annotate
from .parsing import FailureClass, ParseOutcome, parse_structured_output
from .scripted import FaultInjectionBackend, ScriptedBackend

__all__ = [
    "AnnotateOutcome",
    "AnnotatorBackend",
    "BackendCapabilities",
    "BackendUnavailable",
    "ChatCompletionsBackend",
    "ChatEndpointConfig",
    "FailureClass",
    "FaultInjectionBackend",
    "OracleBackend",
    "ParseOutcome",
    "RawModelOutput",
    "RuleOracle",
    "ScriptedBackend",
    "load_endpoint_config",
    "parse_structured_output",
    "rule_oracle_annotate",
]
