// Typed client for the session service. Outbound round payloads are
// schema-validated before sending; all responses are parsed through the
// same schemas the tests use.

import {
  ProgressEvent,
  RoundPayload,
  RoundResult,
  Scores,
  SessionInfo,
} from "./schema.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function expectJson(resp: Response): Promise<unknown> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const doc = (await resp.json()) as { detail?: string };
      if (doc.detail) detail = String(doc.detail);
    } catch {
      // keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json();
}

export interface ProgressHandlers {
  onEvent: (event: ProgressEvent) => void;
  onClose?: () => void;
  onError?: (err: unknown) => void;
}

export class SessionApi {
  constructor(
    readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async createSession(body: {
    scene?: string;
    sequence?: string;
    reference?: boolean;
    session_seed?: number;
    noise?: Record<string, number>;
    config?: Record<string, unknown>;
  }): Promise<SessionInfo> {
    const resp = await this.fetchFn(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return SessionInfo.parse(await expectJson(resp));
  }

  async listScenes(): Promise<string[]> {
    const resp = await this.fetchFn(`${this.base}/scenes`);
    const doc = (await expectJson(resp)) as { scenes: string[] };
    return doc.scenes;
  }

  frameImageUrl(sid: string, frame: number): string {
    return `${this.base}/sessions/${sid}/frames/${frame}/image`;
  }

  maskUrl(sid: string, frame: number): string {
    return `${this.base}/sessions/${sid}/masks/${frame}`;
  }

  async submitRound(sid: string, payload: RoundPayload): Promise<RoundResult> {
    const validated = RoundPayload.parse(payload);
    const resp = await this.fetchFn(`${this.base}/sessions/${sid}/rounds`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(validated),
    });
    return RoundResult.parse(await expectJson(resp));
  }

  async scores(sid: string): Promise<Scores> {
    const resp = await this.fetchFn(`${this.base}/sessions/${sid}/scores`);
    return Scores.parse(await expectJson(resp));
  }

  async suggestion(sid: string): Promise<number | null> {
    const resp = await this.fetchFn(`${this.base}/sessions/${sid}/suggestion`);
    const doc = (await expectJson(resp)) as { frame_index: number | null };
    return doc.frame_index;
  }

  async ledger(sid: string): Promise<unknown> {
    const resp = await this.fetchFn(`${this.base}/sessions/${sid}/ledger`);
    return expectJson(resp);
  }

  /** Open the progress stream; returns a disposer that closes the socket. */
  watchProgress(
    sid: string,
    handlers: ProgressHandlers,
    wsFactory?: (url: string) => WebSocket,
  ): () => void {
    const scheme = this.base.startsWith("https") ? "wss" : "ws";
    const host = this.base.replace(/^https?:\/\//, "") || location.host;
    const url = `${scheme}://${host}/sessions/${sid}/progress`;
    const ws = wsFactory ? wsFactory(url) : new WebSocket(url);
    ws.onmessage = (msg) => {
      const parsed = ProgressEvent.safeParse(JSON.parse(String(msg.data)));
      if (parsed.success) handlers.onEvent(parsed.data);
    };
    ws.onerror = (err) => handlers.onError?.(err);
    ws.onclose = () => handlers.onClose?.();
    return () => ws.close();
  }
}
