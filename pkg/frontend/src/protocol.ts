/** Wire documents of the control service: newline-delimited JSON over TCP,
 * the same objects as WebSocket text frames. */

export interface CommandDoc {
  op: string;
  id: number;
  args?: Record<string, unknown>;
}

export interface ErrorInfo {
  code: string;
  message: string;
}

export interface ReplyDoc {
  id: number | null;
  ok: boolean;
  result?: unknown;
  error?: ErrorInfo;
}

export interface StreamDoc {
  stream: "monitor" | "bus_log" | "signal";
  seq: number;
  event?: Record<string, unknown>;
  record?: Record<string, unknown>;
}

export type InboundDoc = Partial<ReplyDoc> & Partial<StreamDoc>;

/** monitor stream event: {"type": "status" | "verdict" | "attack" |
 * "paused" | "finished" | "error", ...} */
export interface StatusEvent {
  type: "status";
  at_us: number;
  nodes: Record<string, NodeSnapshot>;
  anomalies: unknown[];
  life_seen?: Record<string, number>;
}

export interface NodeSnapshot {
  sensors: Record<string, unknown>;
  actuators: Record<string, boolean>;
  life_counter: number;
}

export interface VerdictEvent {
  type: "verdict";
  at_us: number;
  sof_us: number;
  can_id: number;
  label: string;
  truth?: string;
  elapsed_us: number;
  probabilities: number[];
}

export interface AttackEvent {
  type: "attack";
  action: "start" | "stop";
  handle: string;
  kind: string;
  at_us: number;
}

export interface FinishedEvent {
  type: "finished";
  passed: boolean;
  report: Record<string, unknown>;
}

export interface BusLogRecordDoc {
  at_us: number;
  can_id: number;
  dlc: number;
  payload: string;
  source: string;
  label: string;
}

export interface AttackProfileDoc {
  kind: "DosFlood" | "Fuzz" | "Spoof" | "Replay";
  [param: string]: unknown;
}

/** Latency budget: time for the next 4 worst-case 8-byte frames at
 * 500 kbit/s. A verdict slower than this cannot keep up with the wire. */
export const LINE_RATE_BUDGET_US = 1184;
