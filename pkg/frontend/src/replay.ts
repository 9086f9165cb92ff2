/**
 * Replay mode: load a recorded transcript and step it through a live session
 * turn by turn — how a desk user exercises the live loop without a real call.
 */

import { readFileSync } from "node:fs";

import type { ApiClient } from "./client.js";
import type { ConversationPayload, TurnPayload } from "./types.js";

/** Parse a transcript file: line-delimited turn records or one conversation object. */
export function loadTranscript(path: string): ConversationPayload[] {
  const raw = readFileSync(path, "utf-8").trim();
  if (!raw) return [];
  if (raw.startsWith("{") && !raw.includes("\n{")) {
    const doc = JSON.parse(raw) as ConversationPayload;
    return [doc];
  }
  const grouped = new Map<string, TurnPayload[]>();
  const order: string[] = [];
  for (const line of raw.split("\n")) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const record = JSON.parse(trimmed) as TurnPayload & { conversation_id: string };
    const { conversation_id: conversationId, ...turn } = record;
    if (!grouped.has(conversationId)) {
      grouped.set(conversationId, []);
      order.push(conversationId);
    }
    grouped.get(conversationId)!.push(turn as TurnPayload);
  }
  return order.map((conversationId) => ({
    conversation_id: conversationId,
    metadata: {},
    turns: grouped
      .get(conversationId)!
      .slice()
      .sort((a, b) => a.turn_index - b.turn_index),
  }));
}

export class ReplayController {
  private cursor = 0;

  constructor(
    private readonly client: ApiClient,
    private readonly sessionId: string,
    readonly conversation: ConversationPayload,
  ) {}

  get position(): number {
    return this.cursor;
  }

  get finished(): boolean {
    return this.cursor >= this.conversation.turns.length;
  }

  /** Submit the next recorded turn; resolves with the server's annotation record. */
  async step() {
    if (this.finished) throw new Error("replay finished");
    const turn = this.conversation.turns[this.cursor];
    const record = await this.client.pushTurn(this.sessionId, turn.speaker, turn.text);
    this.cursor += 1;
    return record;
  }

  async runToEnd() {
    const records = [];
    while (!this.finished) records.push(await this.step());
    return records;
  }
}
