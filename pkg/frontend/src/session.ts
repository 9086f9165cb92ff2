/**
 * Client-side session mirror. Renders only server-confirmed state: events
 * apply strictly in sequence order (out-of-order deliveries are buffered
 * until the gap fills, duplicates are dropped), so the displayed timeline
 * never reorders regardless of network delivery order.
 */

import type {
  AnnotationRecordPayload,
  CallRecordPayload,
  SpeakerRole,
  StoreEventPayload,
  TurnAnnotation,
  TurnPayload,
} from "./types.js";

export type ConnectionStatus = "idle" | "connecting" | "live" | "closed" | "error";

export interface TimelineEntry {
  turnIndex: number;
  speaker: SpeakerRole;
  text: string;
  annotation: TurnAnnotation | null;
  annotationStatus: "pending" | "ok" | "failed";
  error?: string;
}

export class ConsoleSession {
  readonly sessionId: string;
  connection: ConnectionStatus = "idle";
  finalized = false;
  record: CallRecordPayload | null = null;
  backend: string | null = null;

  private confirmedSeq = 0;
  private buffered = new Map<number, StoreEventPayload>();
  private entries: TimelineEntry[] = [];
  private pendingSubmissions: string[] = [];

  constructor(sessionId: string) {
    this.sessionId = sessionId;
  }

  get lastConfirmedSeq(): number {
    return this.confirmedSeq;
  }

  get timeline(): readonly TimelineEntry[] {
    return this.entries;
  }

  get pendingCount(): number {
    return this.pendingSubmissions.length;
  }

  /** Record a locally submitted turn awaiting server confirmation. */
  markPending(text: string): void {
    this.pendingSubmissions.push(text);
  }

  /**
   * Apply one stream event. Events at or below the confirmed sequence are
   * duplicates and ignored; events further ahead than the next expected one
   * wait in the buffer. Returns the number of events actually applied.
   */
  apply(event: StoreEventPayload): number {
    if (event.seq <= this.confirmedSeq) return 0;
    this.buffered.set(event.seq, event);
    let applied = 0;
    for (;;) {
      const next = this.buffered.get(this.confirmedSeq + 1);
      if (!next) break;
      this.buffered.delete(next.seq);
      this.applyInOrder(next);
      this.confirmedSeq = next.seq;
      applied += 1;
    }
    return applied;
  }

  private applyInOrder(event: StoreEventPayload): void {
    switch (event.type) {
      case "session-opened": {
        this.backend = String(event.data["backend"] ?? "");
        break;
      }
      case "turn-added": {
        const turn = event.data as unknown as TurnPayload;
        const matched = this.pendingSubmissions.indexOf(turn.text);
        if (matched !== -1) this.pendingSubmissions.splice(matched, 1);
        this.entries.push({
          turnIndex: turn.turn_index,
          speaker: turn.speaker,
          text: turn.text,
          annotation: null,
          annotationStatus: "pending",
        });
        break;
      }
      case "annotation-added": {
        const record = event.data as unknown as AnnotationRecordPayload;
        const entry = this.entries.find((e) => e.turnIndex === record.turn_index);
        if (!entry) return;
        if (record.status === "ok") {
          entry.annotation = record.annotation;
          entry.annotationStatus = "ok";
        } else {
          entry.annotationStatus = "failed";
          entry.error = record.error ?? "annotation failed";
        }
        break;
      }
      case "record-finalized": {
        this.finalized = true;
        this.record = event.data["record"] as CallRecordPayload;
        break;
      }
    }
  }

  /** Confirmed annotations in turn order (what the panels render from). */
  confirmedAnnotations(): TurnAnnotation[] {
    return this.entries
      .filter((e) => e.annotationStatus === "ok" && e.annotation !== null)
      .map((e) => e.annotation as TurnAnnotation);
  }

  latestAnnotation(): TurnAnnotation | null {
    for (let i = this.entries.length - 1; i >= 0; i -= 1) {
      const entry = this.entries[i];
      if (entry.annotationStatus === "ok" && entry.annotation) return entry.annotation;
    }
    return null;
  }
}
