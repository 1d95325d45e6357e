import { Ack, AnswerBody, Choice, TaskEnvelope, TaskFetch, WIRE_VERSION, WorkerGrant } from "./types.js";

export class RejectedError extends Error {
  constructor() {
    super("worker rejected");
  }
}

export interface ClientOptions {
  baseUrl?: string;
  /** retries for network errors / 5xx on submission */
  maxRetries?: number;
  /** base backoff in ms, doubled per attempt */
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
  fetchFn?: typeof fetch;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * Typed access to the annotation API.
 *
 * Submission retries are duplicate-safe: the server dedupes on
 * (worker, task), so a retry after an ambiguous failure either lands the
 * answer or comes back 409, which means the first attempt already landed.
 */
export class AnnotationClient {
  readonly baseUrl: string;
  private maxRetries: number;
  private backoffMs: number;
  private sleep: (ms: number) => Promise<void>;
  private fetchFn: typeof fetch;

  constructor(opts: ClientOptions = {}) {
    this.baseUrl = opts.baseUrl ?? "";
    this.maxRetries = opts.maxRetries ?? 4;
    this.backoffMs = opts.backoffMs ?? 250;
    this.sleep = opts.sleep ?? defaultSleep;
    this.fetchFn = opts.fetchFn ?? ((...args) => fetch(...args));
  }

  async register(): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/register`, { method: "POST" });
    if (!resp.ok) throw new Error(`register failed: HTTP ${resp.status}`);
    const body = (await resp.json()) as WorkerGrant;
    return body.worker;
  }

  async fetchTask(worker: string): Promise<TaskFetch> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/api/task?worker=${encodeURIComponent(worker)}`);
    if (resp.status === 204) return { status: "done" };
    if (resp.status === 403) return { status: "rejected" };
    if (!resp.ok) throw new Error(`task fetch failed: HTTP ${resp.status}`);
    const envelope = (await resp.json()) as TaskEnvelope;
    return { status: "task", envelope };
  }

  async submitAnswer(worker: string, envelope: TaskEnvelope, choice: Choice,
                     responseMs: number): Promise<Ack | "duplicate"> {
    const body: AnswerBody = {
      v: WIRE_VERSION,
      worker,
      task: envelope.task,
      choice,
      response_ms: Math.max(0, Math.round(responseMs)),
      token: envelope.token,
    };
    let attempt = 0;
    for (;;) {
      let resp: Response | null = null;
      try {
        resp = await this.fetchFn(`${this.baseUrl}/api/answer`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(body),
        });
      } catch {
        resp = null; // network failure: retry below
      }
      if (resp) {
        if (resp.ok) return (await resp.json()) as Ack;
        if (resp.status === 409) return "duplicate"; // already stored server-side
        if (resp.status === 403) throw new RejectedError();
        if (resp.status < 500) throw new Error(`answer rejected: HTTP ${resp.status}`);
      }
      attempt += 1;
      if (attempt > this.maxRetries) {
        throw new Error(`answer failed after ${attempt} attempts`);
      }
      await this.sleep(this.backoffMs * 2 ** (attempt - 1));
    }
  }
}
