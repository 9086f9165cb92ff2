"""Test and calibration backends: scripted playback and fault injection."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

from ..context import InferenceRequest, request_fingerprint
from ..model import IntentTaxonomy, TASK_NAMES, TurnAnnotation
from ..serialize import annotation_to_dict, annotation_from_dict, annotation_to_json
from .base import AnnotatorBackend, BackendCapabilities, RawModelOutput


class ScriptedBackend(AnnotatorBackend):
    """Plays back canned raw texts, either per-fingerprint or as a constant.

    Useful for harness checks: a backend that always emits unparseable junk,
    or one wired to specific requests.
    """

    def __init__(
        self,
        responses: Union[str, dict, Callable[[InferenceRequest], str]],
        identity: str = "scripted",
        taxonomy: Optional[IntentTaxonomy] = None,
        audit_sink=None,
    ) -> None:
        super().__init__(
            identity, BackendCapabilities(deterministic=True), taxonomy, audit_sink
        )
        self._responses = responses

    def complete(self, request: InferenceRequest) -> RawModelOutput:
        fingerprint = request_fingerprint(request)
        if callable(self._responses):
            text = self._responses(request)
        elif isinstance(self._responses, dict):
            text = self._responses[fingerprint]
        else:
            text = self._responses
        return RawModelOutput(
            text=text, latency_ms=0, backend=self.identity, request_fingerprint=fingerprint
        )


def _next_label(value: str, choices: Sequence[str]) -> str:
    """Deterministically pick a wrong label: the next one cyclically."""
    pool = list(choices)
    return pool[(pool.index(value) + 1) % len(pool)]


class FaultInjectionBackend(AnnotatorBackend):
    """Wraps another backend and corrupts exactly one task's label on a fixed
    fraction of calls, Bresenham-spread over the arrival sequence so the
    realized fraction tracks wrong_fraction to within 1/n.
    """

    def __init__(
        self,
        inner: AnnotatorBackend,
        task: str,
        wrong_fraction: float,
        identity: Optional[str] = None,
        taxonomy: Optional[IntentTaxonomy] = None,
    ) -> None:
        if task not in TASK_NAMES:
            raise ValueError(f"unknown task {task!r}")
        if not (0.0 <= wrong_fraction <= 1.0):
            raise ValueError("wrong_fraction must be in [0, 1]")
        super().__init__(
            identity or f"{inner.identity}+fault-{task}",
            BackendCapabilities(deterministic=True),
            taxonomy if taxonomy is not None else inner.taxonomy,
            None,
        )
        self.inner = inner
        self.task = task
        self.wrong_fraction = wrong_fraction
        self._calls = 0

    def _should_corrupt(self) -> bool:
        i = self._calls
        self._calls += 1
        before = int(i * self.wrong_fraction)
        after = int((i + 1) * self.wrong_fraction)
        return after > before

    def _corrupt(self, annotation: TurnAnnotation) -> TurnAnnotation:
        data = annotation_to_dict(annotation)
        if self.task == "emotion":
            data["emotion"] = _next_label(data["emotion"], ["neutral", "negative", "positive"])
        elif self.task == "sentiment":
            data["sentiment"] = _next_label(data["sentiment"], ["none", "refusal", "insult", "threat"])
        elif self.task == "call_stage":
            data["call_stage"] = _next_label(
                data["call_stage"], ["opening", "verification", "negotiation", "commitment", "closure"]
            )
        else:
            data["intent"] = _next_label(data["intent"], list(self.taxonomy.labels))
        return annotation_from_dict(data)

    def complete(self, request: InferenceRequest) -> RawModelOutput:
        raw = self.inner.complete(request)
        if not self._should_corrupt():
            return RawModelOutput(
                text=raw.text,
                latency_ms=raw.latency_ms,
                backend=self.identity,
                request_fingerprint=raw.request_fingerprint,
                retries=raw.retries,
            )
        from .parsing import parse_structured_output

        outcome = parse_structured_output(raw.text, request.output_schema_version, self.taxonomy)
        if not outcome.ok:
            return raw
        corrupted = self._corrupt(outcome.annotation)
        return RawModelOutput(
            text=annotation_to_json(corrupted),
            latency_ms=raw.latency_ms,
            backend=self.identity,
            request_fingerprint=raw.request_fingerprint,
            retries=raw.retries,
        )
