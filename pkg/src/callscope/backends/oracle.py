"""Deterministic rule-based annotator.

One code path, two documented uses:

  (a) ground-truth recoverer on simulator output — templates embed cue
      phrases and slot patterns from the same language pack the oracle reads,
      so on full-history contexts the oracle reproduces gold exactly;
  (b) weak keyword baseline on arbitrary text — the same substring/regex
      rules applied best-effort.

Rules, in order:
  * agent turns get default labels (neutral / none / other): the schema
    describes the customer's state;
  * customer labels are the first matching cue phrase per task, scanned in
    the pack's listing order (case-folded substring match); no match falls
    back to neutral / none / other;
  * call stage is the stage of the most recent stage-cue-bearing turn across
    target + context (target first, then context newest-to-oldest), default
    opening — so recovery needs the stage-lead turn in context, which
    full-history policies guarantee;
  * slots come from the target turn only: money matches are attributed by
    keywords in the preceding window (debt keywords before promise keywords),
    dates likewise (due-date keywords before promise keywords), day/month
    dates without a year resolve against the pinned resolution year.

Noise never breaks recovery by construction: all injected phenomena prepend
markers or truncate expendable tails, leaving cue substrings and slot
patterns intact.
"""

from __future__ import annotations

import re
from datetime import date
from typing import Optional

from ..context import InferenceRequest, request_fingerprint
from ..model import (
    CallStageLabel,
    EmotionLabel,
    IntentTaxonomy,
    MoneyAmount,
    SentimentLabel,
    SlotValues,
    Speaker,
    TurnAnnotation,
)
from ..serialize import annotation_to_json
from ..simulator import LanguagePack, default_pack
from .base import AnnotatorBackend, BackendCapabilities, RawModelOutput

DEFAULT_RESOLUTION_YEAR = 2026


class RuleOracle:
    def __init__(
        self,
        pack: Optional[LanguagePack] = None,
        resolution_year: int = DEFAULT_RESOLUTION_YEAR,
    ) -> None:
        self.pack = pack if pack is not None else default_pack()
        self.resolution_year = resolution_year
        rules = self.pack.slot_rules
        self._money_re = re.compile(rules["money_pattern"])
        self._date_re = re.compile(rules["date_pattern"])
        self._dpd_re = re.compile(rules["dpd_pattern"])
        self._agent_name_res = [re.compile(p, re.IGNORECASE) for p in rules["agent_name_patterns"]]
        self._customer_name_res = [re.compile(p, re.IGNORECASE) for p in rules["customer_name_patterns"]]
        self._window = int(rules["keyword_window_chars"])
        self._kw = {
            key: tuple(kw.casefold() for kw in rules[key])
            for key in (
                "debt_amount_keywords",
                "promise_amount_keywords",
                "due_date_keywords",
                "promise_date_keywords",
            )
        }

    # -- label rules --------------------------------------------------------

    def _first_cue(self, task: str, folded_text: str) -> Optional[str]:
        for label, phrases in self.pack.cues[task].items():
            for phrase in phrases:
                if phrase.casefold() in folded_text:
                    return label
        return None

    def _stage(self, request: InferenceRequest) -> CallStageLabel:
        texts = [request.target_turn[1]] + [text for _, text in reversed(request.context_turns)]
        for text in texts:
            folded = text.casefold()
            cue = self._first_cue("stage", folded)
            if cue is not None:
                return CallStageLabel(cue)
        return CallStageLabel.OPENING

    # -- slot rules ---------------------------------------------------------

    def _window_before(self, text: str, start: int) -> str:
        return text[max(0, start - self._window) : start].casefold()

    def _extract_slots(self, text: str) -> SlotValues:
        kwargs: dict = {}
        for match in self._money_re.finditer(text):
            digits = match.group(1) or match.group(2)
            if digits is None:
                continue
            amount = int(digits.replace(".", ""))
            if amount <= 0:
                continue
            window = self._window_before(text, match.start())
            if any(kw in window for kw in self._kw["debt_amount_keywords"]):
                kwargs.setdefault("total_debt", MoneyAmount(amount))
            elif any(kw in window for kw in self._kw["promise_amount_keywords"]):
                kwargs.setdefault("promised_payment_amount", MoneyAmount(amount))
        for match in self._date_re.finditer(text):
            day, month = int(match.group(1)), int(match.group(2))
            year = int(match.group(3)) if match.group(3) else self.resolution_year
            try:
                value = date(year, month, day)
            except ValueError:
                continue
            window = self._window_before(text, match.start())
            if any(kw in window for kw in self._kw["due_date_keywords"]):
                kwargs.setdefault("due_date", value)
            elif any(kw in window for kw in self._kw["promise_date_keywords"]):
                kwargs.setdefault("promised_payment_date", value)
        dpd = self._dpd_re.search(text)
        if dpd:
            kwargs["days_past_due"] = int(dpd.group(1))
        for regexes, slot in (
            (self._agent_name_res, "agent_name"),
            (self._customer_name_res, "customer_name"),
        ):
            for regex in regexes:
                match = regex.search(text)
                if match:
                    name = match.group(1).strip()
                    if name:
                        kwargs[slot] = name
                    break
        return SlotValues(**kwargs)

    # -- entry point --------------------------------------------------------

    def annotate_turn(self, request: InferenceRequest) -> TurnAnnotation:
        speaker, text = request.target_turn
        stage = self._stage(request)
        slots = self._extract_slots(text)
        if speaker == Speaker.AGENT:
            return TurnAnnotation(
                EmotionLabel.NEUTRAL, SentimentLabel.NONE, "other", stage, slots
            )
        folded = text.casefold()
        emotion = self._first_cue("emotion", folded) or "neutral"
        sentiment = self._first_cue("sentiment", folded) or "none"
        intent = self._first_cue("intent", folded) or "other"
        return TurnAnnotation(
            EmotionLabel(emotion), SentimentLabel(sentiment), intent, stage, slots
        )


def rule_oracle_annotate(
    request: InferenceRequest,
    pack: Optional[LanguagePack] = None,
    resolution_year: int = DEFAULT_RESOLUTION_YEAR,
) -> TurnAnnotation:
    """Annotate one request with the rule oracle (always returns; defaults
    neutral/none/other/opening with empty slots when nothing matches)."""
    return RuleOracle(pack, resolution_year).annotate_turn(request)


class OracleBackend(AnnotatorBackend):
    """Rule oracle behind the backend interface. Emits its annotation as
    canonical JSON so the shared parse pipeline sees the same surface an LLM
    backend would (and round-trips with zero repairs)."""

    def __init__(
        self,
        identity: str = "rule-oracle",
        pack: Optional[LanguagePack] = None,
        taxonomy: Optional[IntentTaxonomy] = None,
        resolution_year: int = DEFAULT_RESOLUTION_YEAR,
        audit_sink=None,
    ) -> None:
        super().__init__(
            identity,
            BackendCapabilities(supports_batching=True, deterministic=True),
            taxonomy,
            audit_sink,
        )
        self.oracle = RuleOracle(pack, resolution_year)

    def complete(self, request: InferenceRequest) -> RawModelOutput:
        annotation = self.oracle.annotate_turn(request)
        return RawModelOutput(
            text=annotation_to_json(annotation),
            latency_ms=0,
            backend=self.identity,
            request_fingerprint=request_fingerprint(request),
        )
