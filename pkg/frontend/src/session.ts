/** Live session against the control service over one WebSocket.
 *
 * The session renders only what the service streams: every state field is
 * written by a reply or stream document, never simulated client-side.
 * Stream ingestion is decoupled from rendering by a bounded queue; when the
 * queue overflows the oldest documents are dropped and counted.
 */

import {
  AttackEvent,
  AttackProfileDoc,
  BusLogRecordDoc,
  CommandDoc,
  InboundDoc,
  LINE_RATE_BUDGET_US,
  StatusEvent,
  VerdictEvent,
} from "./protocol.js";

export type ConnectionStatus =
  | "idle"
  | "connecting"
  | "live"
  | "reconnecting"
  | "auth_failed"
  | "closed";

/* structural subset of both the browser WebSocket and the ws package */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
}

export interface Timers {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
}

export interface SessionOptions {
  url: string;
  token?: string;
  socketFactory: (url: string) => SocketLike;
  timers?: Timers;
  /** bounded ingest queue between the socket and rendering */
  maxQueue?: number;
  /** bounded verdict feed / trace view lengths */
  maxFeed?: number;
  maxTrace?: number;
  /** life sparkline window, in status samples */
  sparkWindow?: number;
  /** samples with no life-counter advance before a card reads as flat */
  flatWindow?: number;
  backoffMs?: number;
  maxBackoffMs?: number;
  callTimeoutMs?: number;
}

export interface EcuCard {
  name: string;
  /** recent life_counter samples, oldest first */
  life: number[];
  lifeFlat: boolean;
  sensors: Record<string, unknown>;
  actuators: Record<string, boolean>;
}

export interface AttackChip {
  handle: string;
  kind: string;
  active: boolean;
}

export interface VerdictEntry {
  seq: number;
  atUs: number;
  canId: number;
  label: string;
  elapsedUs: number;
}

export interface TraceRow {
  seq: number;
  atUs: number;
  canId: number;
  dlc: number;
  payload: string;
  source: string;
  label: string;
}

export interface LatencyStats {
  budgetUs: number;
  count: number;
  lastUs: number | null;
  meanUs: number | null;
  maxUs: number | null;
  withinBudget: number | null;
}

export interface ScenarioSummary {
  name: string;
  stopTimeUs: number | null;
  nodes: string[];
}

export interface UiSessionState {
  connection: ConnectionStatus;
  /** user-facing banner: "AuthFailed" or "Disconnected", null when live */
  banner: string | null;
  scenario: ScenarioSummary | null;
  nowUs: number;
  running: boolean;
  finished: boolean;
  passed: boolean | null;
  statusCount: number;
  anomalies: number;
  ecus: Record<string, EcuCard>;
  attacks: AttackChip[];
  /** newest last; order is exactly the monitor stream order */
  verdicts: VerdictEntry[];
  trace: TraceRow[];
  latency: LatencyStats;
  droppedDocs: number;
  toasts: string[];
}

function freshState(): UiSessionState {
  return {
    connection: "idle",
    banner: null,
    scenario: null,
    nowUs: 0,
    running: false,
    finished: false,
    passed: null,
    statusCount: 0,
    anomalies: 0,
    ecus: {},
    attacks: [],
    verdicts: [],
    trace: [],
    latency: {
      budgetUs: LINE_RATE_BUDGET_US,
      count: 0,
      lastUs: null,
      meanUs: null,
      maxUs: null,
      withinBudget: null,
    },
    droppedDocs: 0,
    toasts: [],
  };
}

interface Pending {
  resolve: (v: unknown) => void;
  reject: (e: Error) => void;
  timer: unknown;
}

export class ServiceError extends Error {
  code: string;
  constructor(code: string, message: string) {
    super(message);
    this.code = code;
  }
}

const DEFAULT_TIMERS: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (h) => clearTimeout(h as Parameters<typeof clearTimeout>[0]),
};

export class UiSession {
  readonly state: UiSessionState = freshState();

  private opts: Required<Omit<SessionOptions, "token">> & { token?: string };
  private socket: SocketLike | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private queue: InboundDoc[] = [];
  private drainScheduled = false;
  private renderListeners = new Set<(s: UiSessionState) => void>();
  private reconnectAttempts = 0;
  private reconnectTimer: unknown = null;
  private closedByUser = false;
  private latencySum = 0;
  private latencyWithin = 0;

  constructor(options: SessionOptions) {
    this.opts = {
      timers: DEFAULT_TIMERS,
      maxQueue: 512,
      maxFeed: 200,
      maxTrace: 300,
      sparkWindow: 60,
      flatWindow: 4,
      backoffMs: 250,
      maxBackoffMs: 8000,
      callTimeoutMs: 30000,
      ...options,
    };
  }

  onRender(fn: (s: UiSessionState) => void): () => void {
    this.renderListeners.add(fn);
    return () => this.renderListeners.delete(fn);
  }

  // ------------------------------------------------------------ lifecycle

  connect(): void {
    this.closedByUser = false;
    this.openSocket();
  }

  close(): void {
    this.closedByUser = true;
    this.cancelReconnect();
    this.socket?.close();
    this.state.connection = "closed";
    this.emitRender();
  }

  private openSocket(): void {
    this.state.connection =
      this.reconnectAttempts > 0 ? "reconnecting" : "connecting";
    this.emitRender();
    const sock = this.opts.socketFactory(this.opts.url);
    this.socket = sock;
    sock.onopen = () => this.handleOpen();
    sock.onmessage = (ev: { data: unknown }) => this.handleMessage(String(ev.data));
    sock.onclose = () => this.handleClose();
    sock.onerror = () => {
      /* the close event carries the consequence */
    };
  }

  private async handleOpen(): Promise<void> {
    try {
      if (this.opts.token !== undefined) {
        await this.call("auth", { token: this.opts.token });
      }
      this.reconnectAttempts = 0;
      this.state.connection = "live";
      this.state.banner = null;
      this.emitRender();
      // resume streams and refresh the scenario picture on every (re)connect
      await this.call("monitor");
      await this.call("bus_log");
      this.applyStatusReply(await this.call("sys_ctrl", { action: "status" }));
      this.emitRender();
    } catch (err) {
      if (err instanceof ServiceError && err.code === "AuthError") {
        this.state.connection = "auth_failed";
        this.state.banner = "AuthFailed";
        this.closedByUser = true; // a bad token will not heal by retrying
        this.emitRender();
      }
      // other failures surface through handleClose and reconnect
    }
  }

  private handleClose(): void {
    for (const [, p] of this.pending) {
      this.opts.timers.clear(p.timer);
      p.reject(new ServiceError("Disconnected", "connection closed"));
    }
    this.pending.clear();
    this.socket = null;
    if (this.closedByUser) {
      if (this.state.connection !== "auth_failed") {
        this.state.connection = "closed";
      }
      this.emitRender();
      return;
    }
    this.state.connection = "reconnecting";
    this.state.banner = "Disconnected";
    this.emitRender();
    this.scheduleReconnect();
  }

  private scheduleReconnect(): void {
    this.reconnectAttempts += 1;
    const delay = Math.min(
      this.opts.backoffMs * 2 ** (this.reconnectAttempts - 1),
      this.opts.maxBackoffMs,
    );
    this.reconnectTimer = this.opts.timers.set(() => this.openSocket(), delay);
  }

  private cancelReconnect(): void {
    if (this.reconnectTimer !== null) {
      this.opts.timers.clear(this.reconnectTimer);
      this.reconnectTimer = null;
    }
  }

  // ------------------------------------------------------------- commands

  call(op: string, args?: Record<string, unknown>): Promise<unknown> {
    const sock = this.socket;
    if (sock === null) {
      return Promise.reject(new ServiceError("Disconnected", "not connected"));
    }
    const id = this.nextId++;
    const doc: CommandDoc = { op, id, ...(args ? { args } : {}) };
    return new Promise((resolve, reject) => {
      const timer = this.opts.timers.set(() => {
        this.pending.delete(id);
        reject(new ServiceError("Timeout", `${op} timed out`));
      }, this.opts.callTimeoutMs);
      this.pending.set(id, { resolve, reject, timer });
      sock.send(JSON.stringify(doc));
    });
  }

  loadScenario(path: string): Promise<unknown> {
    return this.call("load_scenario", { path });
  }

  run(untilUs?: number): Promise<unknown> {
    return this.call("run", untilUs === undefined ? {} : { until_us: untilUs });
  }

  pause(): Promise<unknown> {
    return this.call("pause");
  }

  setSensor(node: string, sensor: string, value: unknown): Promise<unknown> {
    return this.call("sys_ctrl", { action: "set_sensor", node, sensor, value });
  }

  resetNode(node: string): Promise<unknown> {
    return this.call("reset_node", { node });
  }

  async startAttack(profile: AttackProfileDoc): Promise<AttackChip> {
    const result = (await this.call("att_ctrl", {
      action: "start",
      profile,
    })) as { handle: string; kind: string };
    return { handle: result.handle, kind: result.kind, active: true };
  }

  stopAttack(handle: string): Promise<unknown> {
    return this.call("att_ctrl", { action: "stop", handle });
  }

  // -------------------------------------------------------------- inbound

  private handleMessage(raw: string): void {
    let doc: InboundDoc;
    try {
      doc = JSON.parse(raw) as InboundDoc;
    } catch {
      return; // not a document; nothing to render
    }
    if (typeof doc.id === "number" && this.pending.has(doc.id)) {
      const p = this.pending.get(doc.id)!;
      this.pending.delete(doc.id);
      this.opts.timers.clear(p.timer);
      if (doc.ok) {
        p.resolve(doc.result);
      } else {
        const err = doc.error ?? { code: "InternalError", message: "error" };
        p.reject(new ServiceError(err.code, err.message));
      }
      return;
    }
    if (typeof doc.stream === "string") {
      this.enqueue(doc);
    }
  }

  private enqueue(doc: InboundDoc): void {
    this.queue.push(doc);
    if (this.queue.length > this.opts.maxQueue) {
      this.queue.shift();
      this.state.droppedDocs += 1;
    }
    if (!this.drainScheduled) {
      this.drainScheduled = true;
      this.opts.timers.set(() => this.drain(), 0);
    }
  }

  private drain(): void {
    this.drainScheduled = false;
    const batch = this.queue;
    this.queue = [];
    for (const doc of batch) {
      this.applyStreamDoc(doc);
    }
    if (batch.length > 0) {
      this.emitRender();
    }
  }

  /** Apply one stream document to the state. Exposed for tests. */
  applyStreamDoc(doc: InboundDoc): void {
    if (doc.stream === "monitor" && doc.event) {
      this.applyMonitorEvent(doc.seq as number, doc.event);
    } else if (doc.stream === "bus_log" && doc.record) {
      this.applyBusRecord(doc.seq as number, doc.record);
    }
  }

  private applyMonitorEvent(seq: number, event: Record<string, unknown>): void {
    switch (event.type) {
      case "status":
        this.applyStatus(event as unknown as StatusEvent);
        break;
      case "verdict":
        this.applyVerdict(seq, event as unknown as VerdictEvent);
        break;
      case "attack":
        this.applyAttack(event as unknown as AttackEvent);
        break;
      case "paused":
        this.state.running = false;
        this.state.nowUs = Number(event.at_us ?? this.state.nowUs);
        break;
      case "finished": {
        this.state.running = false;
        this.state.finished = true;
        this.state.passed = Boolean(event.passed);
        break;
      }
      case "error":
        this.state.toasts.push(String(event.message ?? "engine error"));
        break;
    }
  }

  private applyStatus(ev: StatusEvent): void {
    this.state.statusCount += 1;
    this.state.nowUs = ev.at_us;
    this.state.anomalies = Array.isArray(ev.anomalies)
      ? ev.anomalies.length
      : this.state.anomalies;
    for (const [name, snap] of Object.entries(ev.nodes ?? {})) {
      if (typeof snap.life_counter !== "number") {
        continue; // cards are for ECUs; attacker and taps carry no life
      }
      const card = (this.state.ecus[name] ??= {
        name,
        life: [],
        lifeFlat: false,
        sensors: {},
        actuators: {},
      });
      // sparkline the life signal as seen ON THE BUS when the service
      // watches it: a starved node keeps incrementing its internal
      // counter, so only the on-bus count flatlines under a flood
      const onBus = ev.life_seen?.[name];
      card.life.push(typeof onBus === "number" ? onBus : snap.life_counter);
      if (card.life.length > this.opts.sparkWindow) {
        card.life.shift();
      }
      const w = this.opts.flatWindow;
      const tail = card.life.slice(-w);
      card.lifeFlat = tail.length >= w && tail.every((v) => v === tail[0]);
      card.sensors = { ...snap.sensors };
      card.actuators = { ...snap.actuators };
    }
  }

  private applyVerdict(seq: number, ev: VerdictEvent): void {
    this.state.verdicts.push({
      seq,
      atUs: ev.at_us,
      canId: ev.can_id,
      label: ev.label,
      elapsedUs: ev.elapsed_us,
    });
    if (this.state.verdicts.length > this.opts.maxFeed) {
      this.state.verdicts.shift();
    }
    const lat = this.state.latency;
    lat.count += 1;
    lat.lastUs = ev.elapsed_us;
    this.latencySum += ev.elapsed_us;
    lat.meanUs = this.latencySum / lat.count;
    lat.maxUs = lat.maxUs === null ? ev.elapsed_us : Math.max(lat.maxUs, ev.elapsed_us);
    if (ev.elapsed_us <= lat.budgetUs) {
      this.latencyWithin += 1;
    }
    lat.withinBudget = this.latencyWithin / lat.count;
  }

  private applyAttack(ev: AttackEvent): void {
    const existing = this.state.attacks.find((a) => a.handle === ev.handle);
    if (ev.action === "start") {
      if (existing) {
        existing.active = true;
      } else {
        this.state.attacks.push({
          handle: ev.handle,
          kind: ev.kind,
          active: true,
        });
      }
    } else if (existing) {
      existing.active = false;
    }
  }

  private applyBusRecord(seq: number, rec: Record<string, unknown>): void {
    const row = rec as unknown as BusLogRecordDoc;
    this.state.trace.push({
      seq,
      atUs: row.at_us,
      canId: row.can_id,
      dlc: row.dlc,
      payload: row.payload,
      source: row.source,
      label: row.label,
    });
    if (this.state.trace.length > this.opts.maxTrace) {
      this.state.trace.shift();
    }
  }

  private applyStatusReply(result: unknown): void {
    const doc = result as Record<string, unknown>;
    if (!doc || typeof doc !== "object") {
      return;
    }
    this.state.running = Boolean(doc.running);
    this.state.finished = Boolean(doc.finished);
    if (typeof doc.scenario === "string") {
      this.state.scenario = {
        name: doc.scenario,
        stopTimeUs: typeof doc.stop_time_us === "number" ? doc.stop_time_us : null,
        nodes: Object.keys((doc.nodes as object) ?? {}),
      };
    }
    if (typeof doc.now_us === "number") {
      this.state.nowUs = doc.now_us;
    }
    for (const chip of (doc.attacks as AttackChip[] | undefined) ?? []) {
      this.applyAttack({
        type: "attack",
        action: chip.active ? "start" : "stop",
        handle: chip.handle,
        kind: chip.kind,
        at_us: this.state.nowUs,
      });
    }
  }

  private emitRender(): void {
    for (const fn of this.renderListeners) {
      fn(this.state);
    }
  }
}
