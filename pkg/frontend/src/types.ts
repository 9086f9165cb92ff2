/**
 * Wire types mirroring the service's canonical payloads. The console never
 * derives business values of its own: everything rendered comes from these
 * server-sent shapes.
 */

export type SpeakerRole = "agent" | "customer";

export interface MoneyAmount {
  amount: number;
  currency: string;
}

export interface SlotValues {
  agent_name?: string | null;
  customer_name?: string | null;
  total_debt?: MoneyAmount | null;
  days_past_due?: number | null;
  promised_payment_date?: string | null;
  promised_payment_amount?: MoneyAmount | null;
  due_date?: string | null;
}

export interface TurnAnnotation {
  emotion: string;
  sentiment: string;
  intent: string;
  call_stage: string;
  slots: SlotValues;
}

export interface TurnPayload {
  turn_index: number;
  speaker: SpeakerRole;
  text: string;
  start_ms?: number;
  end_ms?: number;
  gold?: TurnAnnotation;
}

export interface AnnotationRecordPayload {
  turn_index: number;
  status: "ok" | "failed";
  annotation: TurnAnnotation | null;
  error: string | null;
  fingerprint: string;
  latency_ms: number;
  raw_text?: string | null;
  repairs?: string[];
  seq?: number;
}

export interface PromisePayload {
  amount?: MoneyAmount | null;
  promised_date?: string | null;
}

export interface CallRecordPayload {
  conversation_id: string;
  final_outcome: string;
  promise: PromisePayload | null;
  stage_trace: Array<[number, string]>;
  emotion_trace: Array<[number, string]>;
  escalation_flag: boolean;
  confrontation_events: Array<[number, string]>;
  slot_summary: SlotValues;
  rule_table_version: string;
}

export interface SessionStatePayload {
  session_id: string;
  backend: string;
  policy: { mode: string; k?: number; budget_chars?: number };
  turns: TurnPayload[];
  annotations: Record<string, AnnotationRecordPayload>;
  finalized: boolean;
  record: CallRecordPayload | null;
  last_seq: number;
}

/** Event envelope from the session stream (server-sent events). */
export interface StoreEventPayload {
  seq: number;
  ts: string;
  type:
    | "session-opened"
    | "turn-added"
    | "annotation-added"
    | "record-finalized";
  data: Record<string, unknown>;
}

export interface ConversationPayload {
  conversation_id: string;
  metadata: Record<string, string>;
  turns: TurnPayload[];
}

export const CALL_STAGES = [
  "opening",
  "verification",
  "negotiation",
  "commitment",
  "closure",
] as const;
