from __future__ import annotations

from datetime import date

from callscope.backends.oracle import OracleBackend, RuleOracle, rule_oracle_annotate
from callscope.context import INSTRUCTION_TEMPLATES, InferenceRequest, render_post_call_input
from callscope.model import CallStageLabel, MoneyAmount, Speaker
from callscope.simulator import NoiseProfile, ScenarioType, generate_corpus


def customer_request(text: str, context=()) -> InferenceRequest:
    return InferenceRequest(
        instruction=INSTRUCTION_TEMPLATES["v1"],
        instruction_version="v1",
        context_turns=tuple(context),
        target_turn=(Speaker.CUSTOMER, text),
    )


class TestKeywordMode:
    def test_promise_sentence_extracts_amount_and_date(self):
        # day/month without year resolves against the pinned resolution year
        request = customer_request(
            "tôi sẽ trả 2.000.000 vào ngày 15/03",
            context=[(Speaker.AGENT, "Vậy em xin chốt lại cam kết của anh/chị ạ.")],
        )
        ann = rule_oracle_annotate(request)
        assert ann.slots.promised_payment_amount == MoneyAmount(2_000_000, "VND")
        assert ann.slots.promised_payment_date == date(2026, 3, 15)
        assert ann.call_stage == CallStageLabel.COMMITMENT
        assert ann.intent == "promise_payment"

    def test_resolution_year_configurable(self):
        oracle = RuleOracle(resolution_year=2030)
        ann = oracle.annotate_turn(customer_request("tôi sẽ trả 500.000 vào ngày 01/02"))
        assert ann.slots.promised_payment_date == date(2030, 2, 1)

    def test_empty_context_greeting_defaults_to_opening(self):
        ann = rule_oracle_annotate(customer_request("Alo, ai đấy?"))
        assert ann.call_stage == CallStageLabel.OPENING
        assert ann.emotion.value == "neutral"
        assert ann.sentiment.value == "none"
        assert ann.intent == "other"
        assert ann.slots.is_empty()

    def test_debt_keywords_route_amount_to_total_debt(self):
        ann = rule_oracle_annotate(customer_request("khoản nợ của tôi là 3.500.000 đồng à?"))
        assert ann.slots.total_debt == MoneyAmount(3_500_000)
        assert ann.slots.promised_payment_amount is None

    def test_due_date_keywords_win_over_promise(self):
        ann = rule_oracle_annotate(
            customer_request("hạn thanh toán là ngày 10/04/2026 đúng không")
        )
        assert ann.slots.due_date == date(2026, 4, 10)
        assert ann.slots.promised_payment_date is None

    def test_plain_number_needs_currency_word(self):
        ann = rule_oracle_annotate(customer_request("tôi sẽ trả 2000000"))
        assert ann.slots.promised_payment_amount is None
        ann2 = rule_oracle_annotate(customer_request("tôi sẽ trả 2000000 đồng"))
        assert ann2.slots.promised_payment_amount == MoneyAmount(2_000_000)

    def test_days_past_due_pattern(self):
        ann = rule_oracle_annotate(customer_request("nghe nói đã quá hạn 45 ngày rồi"))
        assert ann.slots.days_past_due == 45

    def test_invalid_calendar_date_skipped(self):
        ann = rule_oracle_annotate(customer_request("tôi sẽ trả vào ngày 31/02/2026"))
        assert ann.slots.promised_payment_date is None

    def test_agent_turns_get_default_labels(self):
        request = InferenceRequest(
            instruction=INSTRUCTION_TEMPLATES["v1"],
            instruction_version="v1",
            context_turns=(),
            target_turn=(Speaker.AGENT, "Tôi bực mình lắm, tôi không trả đâu."),
        )
        ann = rule_oracle_annotate(request)
        assert ann.emotion.value == "neutral"
        assert ann.sentiment.value == "none"
        assert ann.intent == "other"

    def test_stage_carries_forward_from_context(self):
        context = [
            (Speaker.AGENT, "Mình cùng trao đổi về phương án thanh toán nhé anh/chị."),
            (Speaker.CUSTOMER, "Ừ tôi hiểu rồi."),
        ]
        ann = rule_oracle_annotate(customer_request("Thế à.", context))
        assert ann.call_stage == CallStageLabel.NEGOTIATION


class TestOracleOnSimulatorData:
    def test_recovers_gold_corpus_wide(self, noisy_sim_corpus):
        oracle = RuleOracle()
        for call in noisy_sim_corpus:
            conv = call.conversation
            for request, turn in zip(render_post_call_input(conv), conv.turns):
                assert oracle.annotate_turn(request) == turn.gold

    def test_determinism_across_instances(self):
        corpus = generate_corpus(
            {ScenarioType.NEGOTIATION: 2}, NoiseProfile(0.5, 0.5, 0.5, 0.5), 9
        )
        requests = [
            r for call in corpus for r in render_post_call_input(call.conversation)
        ]
        a = [RuleOracle().annotate_turn(r) for r in requests]
        b = [RuleOracle().annotate_turn(r) for r in requests]
        assert a == b


class TestOracleBackend:
    def test_backend_round_trips_through_parse_pipeline(self, noisy_sim_corpus):
        backend = OracleBackend()
        call = noisy_sim_corpus[0]
        for request, turn in zip(
            render_post_call_input(call.conversation), call.conversation.turns
        ):
            outcome = backend.annotate(request)
            assert outcome.ok
            assert outcome.parse.repairs_applied == ()
            assert outcome.annotation == turn.gold
            assert outcome.raw.backend == "rule-oracle"

    def test_audit_sink_called_before_result(self):
        seen = []
        backend = OracleBackend(audit_sink=lambda raw, parse: seen.append((raw, parse)))
        request = customer_request("xin chào")
        outcome = backend.annotate(request)
        assert len(seen) == 1
        assert seen[0][0].request_fingerprint == outcome.raw.request_fingerprint

    def test_identical_requests_same_fingerprint(self):
        backend = OracleBackend()
        a = backend.annotate(customer_request("xin chào"))
        b = backend.annotate(customer_request("xin chào"))
        assert a.raw.request_fingerprint == b.raw.request_fingerprint
