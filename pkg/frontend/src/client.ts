/** HTTP + streaming client for the annotation service. */

import { SseParser } from "./sse.js";
import type {
  AnnotationRecordPayload,
  CallRecordPayload,
  ConversationPayload,
  SessionStatePayload,
  SpeakerRole,
  StoreEventPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface StreamHandle {
  close(): void;
  done: Promise<void>;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token?: string,
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const headers: Record<string, string> = { ...extra };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(body === undefined ? {} : { "Content-Type": "application/json" }),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch {
        // leave raw body as the detail
      }
      throw new ApiError(response.status, String(detail));
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<{ status: string; backends: string[] }> {
    return this.request("GET", "/v1/healthz");
  }

  createSession(sessionId: string, backend: string, policy?: object): Promise<SessionStatePayload> {
    return this.request("POST", "/v1/sessions", {
      session_id: sessionId,
      backend,
      ...(policy ? { policy } : {}),
    });
  }

  getSession(sessionId: string): Promise<SessionStatePayload> {
    return this.request("GET", `/v1/sessions/${encodeURIComponent(sessionId)}`);
  }

  pushTurn(sessionId: string, speaker: SpeakerRole, text: string): Promise<AnnotationRecordPayload> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/turns`, {
      speaker,
      text,
    });
  }

  finalize(sessionId: string): Promise<CallRecordPayload> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/finalize`);
  }

  getReport(sessionId: string): Promise<CallRecordPayload> {
    return this.request("GET", `/v1/reports/${encodeURIComponent(sessionId)}`);
  }

  batch(
    conversations: ConversationPayload[],
    backend: string,
  ): Promise<{
    calls: Array<{
      conversation: ConversationPayload;
      annotations: Array<Record<string, unknown> | null>;
      record: CallRecordPayload | null;
    }>;
    gaps: unknown[];
    n_turns: number;
    n_annotated: number;
  }> {
    return this.request("POST", "/v1/batch", { backend, conversations });
  }

  /**
   * Subscribe to a session's event stream from `after` (exclusive). The
   * server replays history first, so reconnecting with the last confirmed
   * sequence number resumes without duplicates or gaps. The stream ends at
   * record-finalized or when close() aborts it.
   */
  openStream(
    sessionId: string,
    after: number,
    onEvent: (event: StoreEventPayload) => void,
    onError?: (error: unknown) => void,
  ): StreamHandle {
    const controller = new AbortController();
    const done = (async () => {
      const response = await fetch(
        `${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}/stream?after=${after}`,
        { headers: this.headers(), signal: controller.signal },
      );
      if (!response.ok || !response.body) {
        throw new ApiError(response.status, await response.text());
      }
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      const parser = new SseParser();
      for (;;) {
        const { done: finished, value } = await reader.read();
        if (finished) return;
        for (const sse of parser.feed(decoder.decode(value, { stream: true }))) {
          const payload = JSON.parse(sse.data) as StoreEventPayload;
          onEvent(payload);
          if (payload.type === "record-finalized") return;
        }
      }
    })().catch((error) => {
      if (controller.signal.aborted) return;
      if (onError) onError(error);
      else throw error;
    });
    return {
      close: () => controller.abort(),
      done,
    };
  }
}
