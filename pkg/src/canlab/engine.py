"""Deterministic discrete-event scheduler and the virtual wired-AND CAN bus.

Time is counted in bus bit ticks.  The engine is single-threaded and owns
all simulation state; nodes mutate state only inside event handlers.  Events
at the same tick run in (priority class, insertion sequence) order, so a run
is fully reproducible from (scenario, seed).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .errors import DuplicateId, PastEvent, UnknownNode
from .frame import (
    DOMINANT,
    RECESSIVE,
    CanFrame,
    arbitration_winner,
    encode_frame,
)

DEFAULT_BITRATE = 500_000  # paper testbed operates its controllers at 500 kbit/s


class EventKind(Enum):
    BIT_BOUNDARY = "bit_boundary"      # bus phase transitions (frame end, contention)
    FRAME_QUEUED = "frame_queued"
    TASK_TIMER = "task_timer"
    ATTACK_TICK = "attack_tick"
    MONITOR_POLL = "monitor_poll"
    PROCESSING_DONE = "processing_done"


# Same-tick ordering: frame completions deliver first, node work next, fresh
# tx queueing after that, arbitration once all queues settled, monitor
# snapshots observe the settled tick.
PRIO_FRAME_END = 0
PRIO_NODE = 1
PRIO_QUEUE = 2
PRIO_CONTENTION = 3
PRIO_POLL = 4

_DEFAULT_PRIO = {
    EventKind.BIT_BOUNDARY: PRIO_FRAME_END,
    EventKind.FRAME_QUEUED: PRIO_QUEUE,
    EventKind.TASK_TIMER: PRIO_NODE,
    EventKind.ATTACK_TICK: PRIO_NODE,
    EventKind.MONITOR_POLL: PRIO_POLL,
    EventKind.PROCESSING_DONE: PRIO_NODE,
}


@dataclass
class Event:
    at: int
    kind: EventKind
    target: str | None = None
    payload: Any = None
    priority: int | None = None
    seq: int = -1
    cancelled: bool = False

    def __post_init__(self):
        if self.priority is None:
            self.priority = _DEFAULT_PRIO[self.kind]


@dataclass
class RunStats:
    events_processed: int = 0
    frames_transmitted: int = 0
    errors: int = 0


def resolve_bus(drivers) -> int:
    """Wired-AND of driver levels: dominant iff any driver is dominant.

    ``drivers`` holds DOMINANT(0), RECESSIVE(1) or None (idle); idle drivers
    count as recessive.
    """
    for level in drivers:
        if level == DOMINANT:
            return DOMINANT
    return RECESSIVE


class BusWire:
    """Per-node drive levels and the resolved bus level."""

    def __init__(self):
        self.drivers: dict[str, int | None] = {}

    def set_driver(self, node: str, level: int | None):
        self.drivers[node] = level

    def level(self) -> int:
        return resolve_bus(self.drivers.values())


class Timebase:
    """Tick <-> microsecond conversion for a fixed bitrate."""

    def __init__(self, bitrate: int = DEFAULT_BITRATE):
        if bitrate <= 0:
            raise ValueError(f"bitrate must be positive, got {bitrate}")
        self.bitrate = bitrate
        self.us_per_tick = 1e6 / bitrate

    def ticks(self, us: float) -> int:
        return round(us / self.us_per_tick)

    def us(self, ticks: int) -> float:
        return ticks * self.us_per_tick


@dataclass
class PendingTx:
    """A frame waiting in a node's transmit mailbox.

    ``msg_name`` identifies a logical message slot: a later emission with the
    same name replaces a not-yet-started pending frame, like a controller tx
    mailbox holding only the latest value.
    """
    frame: CanFrame
    source: str
    label: str = "benign"
    msg_name: str | None = None
    enqueued_at: int = 0
    started_at: int | None = None
    handle: Any = None  # owning attack handle, if injected


class BusNode:
    """Base class for anything attached to the virtual bus."""

    def __init__(self, name: str):
        self.name = name
        self.tx_pending: list[PendingTx] = []
        self.error_count = 0

    # -- hooks, all invoked inside engine event handlers --

    def handle_delivery(self, engine: "Engine", record):
        pass

    def handle_task(self, engine: "Engine", task: str):
        pass

    def handle_tx_started(self, engine: "Engine", pending: PendingTx):
        pass

    def handle_tx_done(self, engine: "Engine", pending: PendingTx):
        pass

    def reset(self, engine: "Engine"):
        self.tx_pending.clear()
        self.error_count = 0

    def snapshot(self) -> dict:
        return {"error_count": self.error_count,
                "tx_pending": len(self.tx_pending)}


class Engine:
    """Event loop, bus occupancy, node roster and seeded randomness."""

    def __init__(self, bitrate: int = DEFAULT_BITRATE, seed: int = 0):
        self.timebase = Timebase(bitrate)
        self.seed = seed
        self.now = 0
        self.nodes: dict[str, BusNode] = {}
        self.stats = RunStats()
        self.bus_log: list = []
        self.wire = BusWire()

        self._heap: list[tuple[int, int, int, Event]] = []
        self._seq = 0
        self._streams: dict[str, random.Random] = {}
        self._busy_until = 0
        self._current: PendingTx | None = None
        self._contention_pending = False
        self._frame_listeners: list[Callable] = []
        self._monitor = None  # MonitorHub, attached by monitor module

    # ------------------------------------------------------------- plumbing

    @property
    def bitrate(self) -> int:
        return self.timebase.bitrate

    def rng(self, stream: str) -> random.Random:
        """Per-consumer random stream derived from the master seed.

        String seeding hashes stably across platforms and runs, so adding or
        reordering consumers never perturbs other streams.
        """
        if stream not in self._streams:
            self._streams[stream] = random.Random(f"{self.seed}/{stream}")
        return self._streams[stream]

    def add_node(self, node: BusNode):
        if node.name in self.nodes:
            raise ValueError(f"duplicate node name {node.name!r}")
        self.nodes[node.name] = node
        self.wire.set_driver(node.name, None)
        return node

    def node(self, name: str) -> BusNode:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownNode(f"no node named {name!r}") from None

    def add_frame_listener(self, fn: Callable):
        """fn(record) is called whenever a frame completes on the bus."""
        self._frame_listeners.append(fn)

    # ------------------------------------------------------------ scheduling

    def schedule(self, ev: Event) -> Event:
        if ev.at < self.now:
            raise PastEvent(f"event at {ev.at} is before now={self.now}")
        ev.seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (ev.at, ev.priority, ev.seq, ev))
        return ev

    def post(self, at: int, kind: EventKind, target: str | None = None,
             payload: Any = None, priority: int | None = None) -> Event:
        return self.schedule(Event(at=at, kind=kind, target=target,
                                   payload=payload, priority=priority))

    def run_until(self, t: int) -> RunStats:
        """Execute every event with at <= t in deterministic order."""
        while self._heap and self._heap[0][0] <= t:
            _, _, _, ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.now = ev.at
            self._dispatch(ev)
            self.stats.events_processed += 1
        self.now = max(self.now, t)
        return self.stats

    def run_for(self, ticks: int) -> RunStats:
        return self.run_until(self.now + ticks)

    def step(self) -> Event | None:
        """Execute exactly the next pending event, if any."""
        while self._heap:
            _, _, _, ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.now = ev.at
            self._dispatch(ev)
            self.stats.events_processed += 1
            return ev
        return None

    def pending_events(self) -> int:
        return sum(1 for *_rest, ev in self._heap if not ev.cancelled)

    def _dispatch(self, ev: Event):
        if ev.kind is EventKind.BIT_BOUNDARY:
            phase = ev.payload["phase"]
            if phase == "contention":
                self._run_contention()
            elif phase == "frame_end":
                self._finish_frame(ev.payload["pending"])
        elif ev.kind is EventKind.FRAME_QUEUED:
            self._enqueue_tx(ev.payload)
        elif ev.kind in (EventKind.TASK_TIMER, EventKind.ATTACK_TICK,
                         EventKind.PROCESSING_DONE, EventKind.MONITOR_POLL):
            fn = ev.payload.get("fn") if isinstance(ev.payload, dict) else None
            if fn is not None:
                fn(self, ev)
            elif ev.target is not None:
                self.node(ev.target).handle_task(self, ev.payload)

    # -------------------------------------------------------------- bus side

    def queue_tx(self, node_name: str, frame: CanFrame, label: str = "benign",
                 msg_name: str | None = None, handle: Any = None) -> PendingTx:
        """Hand a frame to a node's CAN controller for transmission."""
        pending = PendingTx(frame=frame, source=node_name, label=label,
                            msg_name=msg_name, enqueued_at=self.now,
                            handle=handle)
        self.post(self.now, EventKind.FRAME_QUEUED, target=node_name,
                  payload=pending)
        return pending

    def _enqueue_tx(self, pending: PendingTx):
        if pending.handle is not None and not getattr(pending.handle, "active", True):
            return  # owning attack stopped before the queue event dispatched
        node = self.node(pending.source)
        if pending.msg_name is not None:
            for i, other in enumerate(node.tx_pending):
                if other.msg_name == pending.msg_name and other.started_at is None:
                    node.tx_pending[i] = pending  # mailbox holds latest value
                    self._arm_contention()
                    return
        node.tx_pending.append(pending)
        self._arm_contention()

    def _arm_contention(self):
        if self._current is not None or self._contention_pending:
            return
        at = max(self.now, self._busy_until)
        self._contention_pending = True
        self.post(at, EventKind.BIT_BOUNDARY, payload={"phase": "contention"},
                  priority=PRIO_CONTENTION)

    def _run_contention(self):
        self._contention_pending = False
        if self._current is not None:
            return
        heads = {name: node.tx_pending[0]
                 for name, node in self.nodes.items() if node.tx_pending}
        if not heads:
            return
        try:
            winner_frame = arbitration_winner([p.frame for p in heads.values()])
        except DuplicateId:
            self._collide_duplicates(heads)
            return
        winner = next(p for p in heads.values() if p.frame is winner_frame)
        self._start_transmission(winner, losers=[p for p in heads.values()
                                                 if p is not winner])

    def _collide_duplicates(self, heads: dict[str, PendingTx]):
        """Two nodes drove identical arbitration fields: both frames are
        destroyed, the bus carries an error burst, and the node later in the
        roster drops its frame so the scenario can make progress."""
        by_field: dict[int, list[str]] = {}
        for name, p in heads.items():
            by_field.setdefault(p.frame.arbitration_field, []).append(name)
        dupes = next(names for names in by_field.values() if len(names) > 1)
        loser_name = dupes[-1]
        loser = self.node(loser_name)
        loser.tx_pending.pop(0)
        loser.error_count += 1
        self.stats.errors += 1
        # error flag (6 dominant) + delimiter (8) + intermission (3)
        self._busy_until = self.now + 17
        self._arm_contention()

    def _start_transmission(self, pending: PendingTx, losers):
        node = self.node(pending.source)
        node.tx_pending.pop(0)
        pending.started_at = self.now
        pending.frame.timestamp = self.now
        enc = encode_frame(pending.frame)
        self._current = pending
        self._busy_until = self.now + len(enc.bits)
        if self._monitor is not None:
            self._monitor.on_tx_start(self, pending, enc, losers)
        self.post(self._busy_until, EventKind.BIT_BOUNDARY,
                  payload={"phase": "frame_end", "pending": pending,
                           "bits": len(enc.bits)},
                  priority=PRIO_FRAME_END)
        node.handle_tx_started(self, pending)

    def _finish_frame(self, pending: PendingTx):
        from .monitor import BusLogRecord  # record type lives with the log tooling

        self._current = None
        frame = pending.frame
        record = BusLogRecord(
            sof_time=pending.started_at,
            can_id=frame.can_id,
            dlc=frame.dlc,
            payload=frame.payload,
            rtr=frame.rtr,
            source=pending.source,
            label=pending.label,
        )
        self.bus_log.append(record)
        self.stats.frames_transmitted += 1
        for name, node in self.nodes.items():
            if name != pending.source:
                node.handle_delivery(self, record)
        self.node(pending.source).handle_tx_done(self, pending)
        for fn in self._frame_listeners:
            fn(record)
        if any(node.tx_pending for node in self.nodes.values()):
            self._arm_contention()

    # ------------------------------------------------------------- control

    def bus_idle(self) -> bool:
        return self._current is None and self.now >= self._busy_until

    def reset_node(self, name: str | None = None):
        """Reinitialize one node (or all); mirrors the hardware reset line."""
        targets = list(self.nodes.values()) if name is None else [self.node(name)]
        for node in targets:
            node.reset(self)

    def snapshot(self) -> dict:
        return {
            "now": self.now,
            "now_us": self.timebase.us(self.now),
            "stats": {
                "events_processed": self.stats.events_processed,
                "frames_transmitted": self.stats.frames_transmitted,
                "errors": self.stats.errors,
            },
            "nodes": {name: node.snapshot() for name, node in self.nodes.items()},
        }
