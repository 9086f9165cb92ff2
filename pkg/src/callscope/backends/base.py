"""Uniform annotation interface over interchangeable backends.

A backend produces raw text for an inference request; the shared parse
pipeline turns that text into a TurnAnnotation or a classified failure. The
raw output, repair trail and request fingerprint are handed to the audit sink
before the parsed result is released, so every annotation is auditable.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

from ..context import InferenceRequest
from ..model import IntentTaxonomy, TurnAnnotation, default_taxonomy
from .parsing import ParseOutcome, parse_structured_output


class BackendUnavailable(Exception):
    """Transport-level failure that survived the retry budget."""


@dataclass(frozen=True)
class BackendCapabilities:
    supports_batching: bool = False
    deterministic: bool = False


@dataclass(frozen=True)
class RawModelOutput:
    text: str
    latency_ms: int
    backend: str
    request_fingerprint: str
    retries: int = 0


@dataclass(frozen=True)
class AnnotateOutcome:
    """ParseOutcome with the raw model output attached."""

    parse: ParseOutcome
    raw: RawModelOutput

    @property
    def ok(self) -> bool:
        return self.parse.ok

    @property
    def annotation(self) -> Optional[TurnAnnotation]:
        return self.parse.annotation


AuditSink = Callable[[RawModelOutput, ParseOutcome], None]


class AnnotatorBackend(ABC):
    """Base class for annotators. annotate() is total with respect to parsing:
    malformed output becomes a classified ParseOutcome, never an exception.
    Transport exhaustion raises BackendUnavailable (retryable by the caller).

    Backends must tolerate concurrent annotate() calls on independent
    requests; ordering guarantees belong to the service layer.
    """

    identity: str
    capabilities: BackendCapabilities

    def __init__(
        self,
        identity: str,
        capabilities: BackendCapabilities,
        taxonomy: Optional[IntentTaxonomy] = None,
        audit_sink: Optional[AuditSink] = None,
    ) -> None:
        self.identity = identity
        self.capabilities = capabilities
        self.taxonomy = taxonomy if taxonomy is not None else default_taxonomy()
        self.audit_sink = audit_sink

    @abstractmethod
    def complete(self, request: InferenceRequest) -> RawModelOutput:
        """Produce raw model text for the rendered request."""

    def annotate(self, request: InferenceRequest) -> AnnotateOutcome:
        raw = self.complete(request)
        outcome = parse_structured_output(raw.text, request.output_schema_version, self.taxonomy)
        if self.audit_sink is not None:
            # audit record is persisted before the result escapes
            self.audit_sink(raw, outcome)
        return AnnotateOutcome(parse=outcome, raw=raw)
