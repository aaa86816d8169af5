import { describe, expect, test } from "vitest";

import { CommandDoc } from "../src/protocol.js";
import {
  ServiceError,
  SessionOptions,
  SocketLike,
  Timers,
  UiSession,
} from "../src/session.js";
import { sparklinePoints } from "../src/sparkline.js";

// ------------------------------------------------------------ test doubles

class FakeTimers implements Timers {
  tasks: { fn: () => void; ms: number; id: number }[] = [];
  private nextId = 1;

  set(fn: () => void, ms: number): unknown {
    const id = this.nextId++;
    this.tasks.push({ fn, ms, id });
    return id;
  }

  clear(handle: unknown): void {
    this.tasks = this.tasks.filter((t) => t.id !== handle);
  }

  /** run every zero-delay task (the drain scheduler) */
  flushZero(): void {
    for (let guard = 0; guard < 100; guard++) {
      const i = this.tasks.findIndex((t) => t.ms === 0);
      if (i < 0) {
        return;
      }
      const [task] = this.tasks.splice(i, 1);
      task.fn();
    }
  }

  delays(): number[] {
    return this.tasks.map((t) => t.ms);
  }

  fire(ms: number): void {
    const i = this.tasks.findIndex((t) => t.ms === ms);
    expect(i, `no pending timer of ${ms} ms`).toBeGreaterThanOrEqual(0);
    const [task] = this.tasks.splice(i, 1);
    task.fn();
  }
}

/** In-memory socket backed by a scripted service: replies to commands the
 * way the control service would, so the session's full handshake runs. */
class FakeSocket implements SocketLike {
  sent: CommandDoc[] = [];
  closed = false;
  onopen: ((ev: unknown) => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;

  constructor(private harness: Harness) {}

  send(data: string): void {
    const doc = JSON.parse(data) as CommandDoc;
    this.sent.push(doc);
    const reply = this.harness.respond(doc);
    if (reply !== null) {
      this.receive(reply);
    }
  }

  close(): void {
    this.closed = true;
    this.onclose?.({});
  }

  // harness controls
  open(): void {
    this.onopen?.({});
  }

  receive(doc: unknown): void {
    this.onmessage?.({ data: JSON.stringify(doc) });
  }

  drop(): void {
    this.onclose?.({});
  }
}

class Harness {
  socks: FakeSocket[] = [];
  timers = new FakeTimers();
  token: string | null = null;
  mute = false; // stop auto-replies (to test disconnect with calls in flight)
  statusResult: Record<string, unknown> = {
    running: false,
    finished: false,
    scenario: "wire-test",
    now_us: 0,
    stop_time_us: 500000,
    frames: 0,
    nodes: { ecu1: {}, ecu2: {}, ecu3: {}, ecu4: {} },
    attacks: [],
  };

  factory = (_url: string): SocketLike => {
    const sock = new FakeSocket(this);
    this.socks.push(sock);
    return sock;
  };

  last(): FakeSocket {
    return this.socks[this.socks.length - 1];
  }

  respond(doc: CommandDoc): unknown {
    if (this.mute) {
      return null;
    }
    const ok = (result: unknown) => ({ id: doc.id, ok: true, result });
    switch (doc.op) {
      case "auth":
        return this.token === null || doc.args?.token === this.token
          ? ok({ authenticated: true })
          : {
              id: doc.id,
              ok: false,
              error: { code: "AuthError", message: "bad token" },
            };
      case "monitor":
      case "bus_log":
        return ok({ subscribed: doc.op });
      case "sys_ctrl":
        return ok(this.statusResult);
      case "att_ctrl":
        return doc.args?.action === "start"
          ? ok({ handle: "dosflood-1", kind: "DosFlood" })
          : ok({ stopped: doc.args?.handle, frames_injected: 7 });
      case "reset_node":
        return ok({ reset: doc.args?.node });
      case "run":
        return ok({ running: true });
      default:
        return {
          id: doc.id,
          ok: false,
          error: { code: "UnknownOp", message: `unknown op ${doc.op}` },
        };
    }
  }
}

function makeSession(
  harness: Harness,
  extra: Partial<SessionOptions> = {},
): UiSession {
  return new UiSession({
    url: "ws://test/ws",
    socketFactory: harness.factory,
    timers: harness.timers,
    ...extra,
  });
}

/** let awaited reply continuations run */
async function settle(): Promise<void> {
  for (let i = 0; i < 12; i++) {
    await Promise.resolve();
  }
}

function monitorDoc(seq: number, event: Record<string, unknown>) {
  return { stream: "monitor", seq, event };
}

function statusEvent(lives: Record<string, number>, atUs = 0) {
  const nodes: Record<string, unknown> = {};
  for (const [name, life] of Object.entries(lives)) {
    nodes[name] = {
      sensors: { brake_pedal: false },
      actuators: { braking_active: false },
      life_counter: life,
    };
  }
  return { type: "status", at_us: atUs, nodes, anomalies: [] };
}

// ------------------------------------------------------------------- tests

describe("connection and auth", () => {
  test("connects, authenticates, subscribes and seeds the scenario", async () => {
    const h = new Harness();
    h.token = "s3cret";
    const session = makeSession(h, { token: "s3cret" });
    session.connect();
    h.last().open();
    await settle();

    expect(session.state.connection).toBe("live");
    expect(session.state.banner).toBeNull();
    expect(h.last().sent.map((d) => d.op)).toEqual([
      "auth",
      "monitor",
      "bus_log",
      "sys_ctrl",
    ]);
    expect(session.state.scenario).toEqual({
      name: "wire-test",
      stopTimeUs: 500000,
      nodes: ["ecu1", "ecu2", "ecu3", "ecu4"],
    });
  });

  test("bad token raises the AuthFailed banner and never retries", async () => {
    const h = new Harness();
    h.token = "right";
    const session = makeSession(h, { token: "wrong" });
    session.connect();
    h.last().open();
    await settle();

    expect(session.state.connection).toBe("auth_failed");
    expect(session.state.banner).toBe("AuthFailed");

    // the service closes after the error; no reconnect may be scheduled
    h.last().drop();
    await settle();
    expect(session.state.connection).toBe("auth_failed");
    expect(h.timers.delays()).toEqual([]);
    expect(h.socks.length).toBe(1);
  });

  test("open service needs no token and skips the auth document", async () => {
    const h = new Harness();
    const session = makeSession(h);
    session.connect();
    h.last().open();
    await settle();
    expect(session.state.connection).toBe("live");
    expect(h.last().sent[0].op).toBe("monitor");
  });
});

describe("reconnect", () => {
  test("unexpected close backs off exponentially and resumes streams", async () => {
    const h = new Harness();
    const session = makeSession(h);
    session.connect();
    h.last().open();
    await settle();
    expect(session.state.connection).toBe("live");

    h.last().drop();
    expect(session.state.connection).toBe("reconnecting");
    expect(session.state.banner).toBe("Disconnected");
    expect(h.timers.delays()).toEqual([250]);

    // two more failures double the delay each time
    h.timers.fire(250);
    h.last().drop();
    expect(h.timers.delays()).toEqual([500]);
    h.timers.fire(500);
    h.last().drop();
    expect(h.timers.delays()).toEqual([1000]);

    // a successful open re-runs the handshake and clears the banner
    h.timers.fire(1000);
    h.last().open();
    await settle();
    expect(session.state.connection).toBe("live");
    expect(session.state.banner).toBeNull();
    expect(h.last().sent.map((d) => d.op)).toEqual([
      "monitor",
      "bus_log",
      "sys_ctrl",
    ]);

    // and the next failure starts the backoff ladder from the bottom
    h.last().drop();
    expect(h.timers.delays()).toEqual([250]);
  });

  test("backoff is capped", async () => {
    const h = new Harness();
    const session = makeSession(h, { backoffMs: 250, maxBackoffMs: 1000 });
    session.connect();
    h.last().open();
    await settle();
    const seen: number[] = [];
    for (let i = 0; i < 5; i++) {
      h.last().drop();
      const [delay] = h.timers.delays();
      seen.push(delay);
      h.timers.fire(delay);
    }
    expect(seen).toEqual([250, 500, 1000, 1000, 1000]);
  });

  test("intentional close does not reconnect", async () => {
    const h = new Harness();
    const session = makeSession(h);
    session.connect();
    h.last().open();
    await settle();
    session.close();
    expect(session.state.connection).toBe("closed");
    expect(h.timers.delays()).toEqual([]);
    expect(h.socks.length).toBe(1);
  });
});

describe("stream reducers", () => {
  async function liveSession(extra: Partial<SessionOptions> = {}) {
    const h = new Harness();
    const session = makeSession(h, extra);
    session.connect();
    h.last().open();
    await settle();
    return { h, session };
  }

  test("verdict feed keeps stream order and is bounded", async () => {
    const { h, session } = await liveSession({ maxFeed: 5 });
    for (let seq = 1; seq <= 8; seq++) {
      h.last().receive(
        monitorDoc(seq, {
          type: "verdict",
          at_us: seq * 1000,
          sof_us: seq * 1000 - 794,
          can_id: 0x100 + seq,
          label: seq % 2 ? "benign" : "dos",
          elapsed_us: 794,
          probabilities: [1, 0, 0, 0],
        }),
      );
    }
    h.timers.flushZero();
    expect(session.state.verdicts.length).toBe(5);
    expect(session.state.verdicts.map((v) => v.seq)).toEqual([4, 5, 6, 7, 8]);
  });

  test("latency gauge tracks count, mean, max and budget fraction", async () => {
    const { h, session } = await liveSession();
    for (const elapsed of [794, 5056]) {
      h.last().receive(
        monitorDoc(elapsed, {
          type: "verdict",
          at_us: 1,
          sof_us: 0,
          can_id: 1,
          label: "benign",
          elapsed_us: elapsed,
          probabilities: [1, 0, 0, 0],
        }),
      );
    }
    h.timers.flushZero();
    const lat = session.state.latency;
    expect(lat.budgetUs).toBe(1184);
    expect(lat.count).toBe(2);
    expect(lat.lastUs).toBe(5056);
    expect(lat.meanUs).toBeCloseTo((794 + 5056) / 2);
    expect(lat.maxUs).toBe(5056);
    expect(lat.withinBudget).toBeCloseTo(0.5);
  });

  test("status events build ECU cards and detect a life flatline", async () => {
    const { h, session } = await liveSession({
      sparkWindow: 5,
      flatWindow: 3,
    });
    const lives = [10, 20, 30, 30, 30, 30, 40];
    for (const [i, life] of lives.entries()) {
      h.last().receive(
        monitorDoc(i + 1, statusEvent({ ecu1: life }, i * 300000)),
      );
    }
    h.timers.flushZero();
    const card = session.state.ecus.ecu1;
    expect(session.state.statusCount).toBe(7);
    expect(card.life).toEqual([30, 30, 30, 30, 40]); // ring of 5
    expect(card.lifeFlat).toBe(false); // the last sample advanced again
    expect(card.actuators).toEqual({ braking_active: false });

    // stall: three equal samples in a row read as flat
    for (const seq of [8, 9, 10]) {
      h.last().receive(monitorDoc(seq, statusEvent({ ecu1: 40 })));
    }
    h.timers.flushZero();
    expect(card.lifeFlat).toBe(true);
  });

  test("sparkline prefers the on-bus life count over the internal counter", async () => {
    // a node starved by a flood keeps incrementing its internal counter;
    // the flatline is only visible in the bus-level life_seen count
    const { h, session } = await liveSession({ flatWindow: 3 });
    const internal = [10, 20, 30, 40, 50];
    const onBus = [9, 18, 18, 18, 18]; // flood starts after the 2nd poll
    for (let i = 0; i < internal.length; i++) {
      const ev = statusEvent({ ecu1: internal[i] }) as Record<string, unknown>;
      ev.life_seen = { ecu1: onBus[i] };
      h.last().receive(monitorDoc(i + 1, ev));
    }
    h.timers.flushZero();
    const card = session.state.ecus.ecu1;
    expect(card.life).toEqual(onBus);
    expect(card.lifeFlat).toBe(true);
  });

  test("ingest queue is bounded and counts drops", async () => {
    const { h, session } = await liveSession({ maxQueue: 4 });
    for (let seq = 1; seq <= 7; seq++) {
      h.last().receive(
        monitorDoc(seq, {
          type: "verdict",
          at_us: seq,
          sof_us: 0,
          can_id: seq,
          label: "benign",
          elapsed_us: 794,
          probabilities: [1, 0, 0, 0],
        }),
      );
    }
    expect(session.state.droppedDocs).toBe(3);
    h.timers.flushZero();
    expect(session.state.verdicts.map((v) => v.seq)).toEqual([4, 5, 6, 7]);
  });

  test("attack events toggle chips and startAttack resolves the handle", async () => {
    const { h, session } = await liveSession();
    const chip = await session.startAttack({ kind: "DosFlood" });
    expect(chip).toEqual({ handle: "dosflood-1", kind: "DosFlood", active: true });

    h.last().receive(
      monitorDoc(1, {
        type: "attack",
        action: "start",
        handle: "dosflood-1",
        kind: "DosFlood",
        at_us: 100,
      }),
    );
    h.timers.flushZero();
    expect(session.state.attacks).toEqual([
      { handle: "dosflood-1", kind: "DosFlood", active: true },
    ]);

    h.last().receive(
      monitorDoc(2, {
        type: "attack",
        action: "stop",
        handle: "dosflood-1",
        kind: "DosFlood",
        at_us: 200,
      }),
    );
    h.timers.flushZero();
    expect(session.state.attacks[0].active).toBe(false);
  });

  test("bus_log records land in the bounded trace view", async () => {
    const { h, session } = await liveSession({ maxTrace: 3 });
    for (let seq = 1; seq <= 5; seq++) {
      h.last().receive({
        stream: "bus_log",
        seq,
        record: {
          at_us: seq * 250,
          can_id: seq,
          dlc: 8,
          payload: "0011223344556677",
          source: "ecu1",
          label: "benign",
        },
      });
    }
    h.timers.flushZero();
    expect(session.state.trace.map((r) => r.seq)).toEqual([3, 4, 5]);
    expect(session.state.trace[0].payload).toBe("0011223344556677");
  });

  test("paused and finished events settle the run state", async () => {
    const { h, session } = await liveSession();
    h.last().receive(monitorDoc(1, { type: "paused", at_us: 250000 }));
    h.last().receive(
      monitorDoc(2, { type: "finished", passed: true, report: {} }),
    );
    h.timers.flushZero();
    expect(session.state.running).toBe(false);
    expect(session.state.finished).toBe(true);
    expect(session.state.passed).toBe(true);
    expect(session.state.nowUs).toBe(250000);
  });
});

describe("command errors", () => {
  test("a service error rejects with its code", async () => {
    const h = new Harness();
    const session = makeSession(h);
    session.connect();
    h.last().open();
    await settle();
    await expect(session.call("no_such_op")).rejects.toMatchObject({
      code: "UnknownOp",
    });
  });

  test("disconnect rejects calls in flight", async () => {
    const h = new Harness();
    const session = makeSession(h);
    session.connect();
    h.last().open();
    await settle();
    h.mute = true;
    const pending = session.call("run");
    h.last().drop();
    await expect(pending).rejects.toMatchObject({ code: "Disconnected" });
  });

  test("calling while disconnected rejects immediately", async () => {
    const h = new Harness();
    const session = makeSession(h);
    await expect(session.run()).rejects.toBeInstanceOf(ServiceError);
  });
});

describe("sparkline", () => {
  test("flat series renders the mid-height flatline", () => {
    expect(sparklinePoints([7, 7, 7], 100, 20)).toBe("0.0,10.0 50.0,10.0 100.0,10.0");
  });

  test("series normalises to the box", () => {
    expect(sparklinePoints([0, 10], 100, 20)).toBe("0.0,20.0 100.0,0.0");
  });

  test("degenerate inputs", () => {
    expect(sparklinePoints([], 100, 20)).toBe("");
    expect(sparklinePoints([3], 100, 20)).toBe("0,10 100,10");
  });
});
