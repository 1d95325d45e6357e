// Wire records for the annotation service. Every body is a single
// self-describing JSON record with a top-level version field.

export const WIRE_VERSION = 1;

export interface TaskEnvelope {
  v: number;
  kind: "task";
  task: string;
  image: string;
  points: [number, number][]; // display coordinates (x, y)
  token: string;
}

export interface WorkerGrant {
  v: number;
  kind: "worker";
  worker: string;
}

export interface Ack {
  v: number;
  kind: "ack";
  task: string;
  state: string;
}

export type Choice = 1 | 2 | 3; // point 1 closer, point 2 closer, hard to tell

export interface AnswerBody {
  v: number;
  worker: string;
  task: string;
  choice: Choice;
  response_ms: number;
  token?: string;
}

export type TaskFetch =
  | { status: "task"; envelope: TaskEnvelope }
  | { status: "done" }
  | { status: "rejected" };
