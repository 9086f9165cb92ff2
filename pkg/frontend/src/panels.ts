/**
 * Pure view builders: server payloads in, view models and text panels out.
 * No business rules live here — values are lifted verbatim from payload
 * fields; the only "state" is which value arrived most recently.
 */

import { CALL_STAGES } from "./types.js";
import type {
  CallRecordPayload,
  MoneyAmount,
  SlotValues,
  TurnAnnotation,
} from "./types.js";
import type { TimelineEntry } from "./session.js";

export interface ChipView {
  emotion: string;
  sentiment: string;
  intent: string;
}

export interface StageView {
  name: string;
  state: "done" | "current" | "upcoming";
}

export interface SlotPanelView {
  promised_payment_amount: string | null;
  promised_payment_date: string | null;
  total_debt: string | null;
  days_past_due: string | null;
  customer_name: string | null;
  agent_name: string | null;
  due_date: string | null;
}

export function formatMoney(money: MoneyAmount | null | undefined): string | null {
  if (!money) return null;
  return `${money.amount.toLocaleString("en-US")} ${money.currency}`;
}

export function annotationChips(annotation: TurnAnnotation): ChipView {
  return {
    emotion: annotation.emotion,
    sentiment: annotation.sentiment,
    intent: annotation.intent,
  };
}

export function stageTracker(currentStage: string | null): StageView[] {
  const position = currentStage ? CALL_STAGES.indexOf(currentStage as never) : -1;
  return CALL_STAGES.map((name, i) => ({
    name,
    state: i < position ? "done" : i === position ? "current" : "upcoming",
  }));
}

/**
 * Slot capture panel: shows, per slot, the value from the most recent
 * annotation that carried it (display recency, not recomputed rollup — the
 * authoritative summary is the server's CallRecord.slot_summary).
 */
export function slotPanel(annotations: readonly TurnAnnotation[]): SlotPanelView {
  const seen: SlotValues = {};
  for (const annotation of annotations) {
    const slots = annotation.slots ?? {};
    for (const [key, value] of Object.entries(slots)) {
      if (value !== null && value !== undefined) {
        (seen as Record<string, unknown>)[key] = value;
      }
    }
  }
  return {
    promised_payment_amount: formatMoney(seen.promised_payment_amount ?? null),
    promised_payment_date: seen.promised_payment_date ?? null,
    total_debt: formatMoney(seen.total_debt ?? null),
    days_past_due: seen.days_past_due != null ? String(seen.days_past_due) : null,
    customer_name: seen.customer_name ?? null,
    agent_name: seen.agent_name ?? null,
    due_date: seen.due_date ?? null,
  };
}

export function slotPanelFromSummary(summary: SlotValues): SlotPanelView {
  return slotPanel([
    { emotion: "", sentiment: "", intent: "", call_stage: "", slots: summary },
  ]);
}

export interface SummaryView {
  outcomeBadge: string;
  promise: { amount: string | null; date: string | null } | null;
  escalation: boolean;
  timeline: Array<{ turnIndex: number; stage: string; emotion: string }>;
  confrontations: Array<{ turnIndex: number; sentiment: string }>;
  slots: SlotPanelView;
}

export function summaryView(record: CallRecordPayload): SummaryView {
  const emotionByTurn = new Map(record.emotion_trace);
  return {
    outcomeBadge: record.final_outcome,
    promise: record.promise
      ? {
          amount: formatMoney(record.promise.amount ?? null),
          date: record.promise.promised_date ?? null,
        }
      : null,
    escalation: record.escalation_flag,
    timeline: record.stage_trace.map(([turnIndex, stage]) => ({
      turnIndex,
      stage,
      emotion: emotionByTurn.get(turnIndex) ?? "",
    })),
    confrontations: record.confrontation_events.map(([turnIndex, sentiment]) => ({
      turnIndex,
      sentiment,
    })),
    slots: slotPanelFromSummary(record.slot_summary),
  };
}

// ---------------------------------------------------------------------------
// Text rendering for the terminal console
// ---------------------------------------------------------------------------

export function renderStageTracker(stages: StageView[]): string {
  return stages
    .map((s) => (s.state === "current" ? `[${s.name}]` : s.state === "done" ? `(${s.name})` : ` ${s.name} `))
    .join(" > ");
}

export function renderChips(chips: ChipView): string {
  return `emotion:${chips.emotion}  sentiment:${chips.sentiment}  intent:${chips.intent}`;
}

export function renderSlotPanel(view: SlotPanelView): string {
  const rows: Array<[string, string | null]> = [
    ["promised amount", view.promised_payment_amount],
    ["promised date", view.promised_payment_date],
    ["total debt", view.total_debt],
    ["days past due", view.days_past_due],
    ["customer", view.customer_name],
    ["agent", view.agent_name],
    ["due date", view.due_date],
  ];
  return rows.map(([label, value]) => `  ${label.padEnd(16)} ${value ?? "-"}`).join("\n");
}

export function renderTimelineEntry(entry: TimelineEntry): string {
  const status =
    entry.annotationStatus === "pending"
      ? "…"
      : entry.annotationStatus === "failed"
        ? `FAILED (${entry.error ?? "?"})`
        : renderChips(annotationChips(entry.annotation as TurnAnnotation)) +
          `  stage:${(entry.annotation as TurnAnnotation).call_stage}`;
  return `#${entry.turnIndex} ${entry.speaker}: ${entry.text}\n    ${status}`;
}

export function renderSummary(view: SummaryView): string {
  const lines = [
    `OUTCOME: ${view.outcomeBadge.toUpperCase()}`,
    view.promise
      ? `promise: ${view.promise.amount ?? "-"} by ${view.promise.date ?? "-"}`
      : "promise: none",
    view.escalation ? "!! ESCALATION FLAGGED !!" : "no escalation",
    "timeline:",
    ...view.timeline.map((t) => `  #${t.turnIndex} ${t.stage} (${t.emotion})`),
  ];
  if (view.confrontations.length > 0) {
    lines.push("confrontation events:");
    lines.push(...view.confrontations.map((c) => `  #${c.turnIndex} ${c.sentiment}`));
  }
  lines.push("slot summary:", renderSlotPanel(view.slots));
  return lines.join("\n");
}
