/**
 * Recorded server payloads for rendering tests (captured from a live oracle
 * session; shapes match the service's canonical wire format).
 */

import type { CallRecordPayload, StoreEventPayload } from "../src/types.js";

export const PAYMENT_EVENTS: StoreEventPayload[] = [
  {
    seq: 1,
    ts: "2026-02-03T09:00:00+00:00",
    type: "session-opened",
    data: {
      conversation_id: "fixture-call",
      backend: "oracle",
      policy: { mode: "full_history" },
    },
  },
  {
    seq: 2,
    ts: "2026-02-03T09:00:01+00:00",
    type: "turn-added",
    data: {
      conversation_id: "fixture-call",
      turn_index: 0,
      speaker: "agent",
      text: "Xin chào, em là Lan gọi từ trung tâm hỗ trợ tín dụng ạ.",
    },
  },
  {
    seq: 3,
    ts: "2026-02-03T09:00:01+00:00",
    type: "annotation-added",
    data: {
      turn_index: 0,
      status: "ok",
      annotation: {
        emotion: "neutral",
        sentiment: "none",
        intent: "other",
        call_stage: "opening",
        slots: { agent_name: "Lan" },
      },
      error: null,
      fingerprint: "f0",
      latency_ms: 0,
      raw_text: "{}",
      repairs: [],
    },
  },
  {
    seq: 4,
    ts: "2026-02-03T09:00:02+00:00",
    type: "turn-added",
    data: {
      conversation_id: "fixture-call",
      turn_index: 1,
      speaker: "customer",
      text: "Tôi sẽ thanh toán 2.000.000 đồng vào ngày 15/03/2026.",
    },
  },
  {
    seq: 5,
    ts: "2026-02-03T09:00:02+00:00",
    type: "annotation-added",
    data: {
      turn_index: 1,
      status: "ok",
      annotation: {
        emotion: "neutral",
        sentiment: "none",
        intent: "promise_payment",
        call_stage: "commitment",
        slots: {
          promised_payment_amount: { amount: 2000000, currency: "VND" },
          promised_payment_date: "2026-03-15",
        },
      },
      error: null,
      fingerprint: "f1",
      latency_ms: 0,
      raw_text: "{}",
      repairs: [],
    },
  },
];

export const PAYMENT_RECORD: CallRecordPayload = {
  conversation_id: "fixture-call",
  final_outcome: "payment_committed",
  promise: {
    amount: { amount: 2000000, currency: "VND" },
    promised_date: "2026-03-15",
  },
  stage_trace: [
    [0, "opening"],
    [1, "commitment"],
  ],
  emotion_trace: [
    [0, "neutral"],
    [1, "neutral"],
  ],
  escalation_flag: false,
  confrontation_events: [],
  slot_summary: {
    agent_name: "Lan",
    promised_payment_amount: { amount: 2000000, currency: "VND" },
    promised_payment_date: "2026-03-15",
  },
  rule_table_version: "1",
};

export const FINALIZE_EVENT: StoreEventPayload = {
  seq: 6,
  ts: "2026-02-03T09:00:05+00:00",
  type: "record-finalized",
  data: { conversation_id: "fixture-call", record: PAYMENT_RECORD },
};

export const ESCALATED_RECORD: CallRecordPayload = {
  conversation_id: "angry-call",
  final_outcome: "refused",
  promise: null,
  stage_trace: [
    [0, "opening"],
    [1, "negotiation"],
    [2, "negotiation"],
  ],
  emotion_trace: [
    [0, "neutral"],
    [1, "negative"],
    [2, "negative"],
  ],
  escalation_flag: true,
  confrontation_events: [
    [1, "refusal"],
    [2, "insult"],
  ],
  slot_summary: {},
  rule_table_version: "1",
};
