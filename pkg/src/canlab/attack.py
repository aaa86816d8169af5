"""Attack injection node: DoS flooding, fuzzing, spoofing and trace replay,
plus the replay CSV format and heuristic tagging of captured traffic.

The attacker owns a dedicated bus port rather than hijacking an ECU; every
injected frame carries its ground-truth label into the bus log.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

from . import labels
from .engine import BusNode, Engine, EventKind
from .errors import (
    ConflictingAttack,
    EmptyTrace,
    InvalidProfile,
    ParseError,
    UnknownHandle,
)
from .frame import CanFrame, nominal_frame_bits

ATTACK_KINDS = ("DosFlood", "Fuzz", "Spoof", "Replay")

_KIND_LABEL = {
    "DosFlood": labels.DOS,
    "Fuzz": labels.FUZZ,
    "Spoof": labels.SPOOF,
}


@dataclass
class AttackProfile:
    kind: str
    dos_id: int = 0x000
    dos_dlc: int = 8
    fuzz_rate: float = 100.0                      # frames per second
    fuzz_id_range: tuple[int, int] = (0x000, 0x7FF)
    payload_distribution: str = "uniform"
    spoof_target: dict | None = None              # id, payload, schedule
    replay_source: object = None                  # ReplayTrace or path
    time_scale: float = 1.0
    seed_stream: str | None = None

    def validate(self):
        if self.kind not in ATTACK_KINDS:
            raise InvalidProfile(f"unknown attack kind {self.kind!r}")
        if self.kind == "DosFlood":
            if not 0 <= self.dos_id <= 0x7FF:
                raise InvalidProfile(f"dos_id out of range: {self.dos_id:#x}")
            if not 0 <= self.dos_dlc <= 8:
                raise InvalidProfile(f"dos_dlc out of range: {self.dos_dlc}")
        elif self.kind == "Fuzz":
            if self.fuzz_rate <= 0:
                raise InvalidProfile(f"fuzz_rate must be positive, got {self.fuzz_rate}")
            lo, hi = self.fuzz_id_range
            if not (0 <= lo <= hi <= 0x7FF):
                raise InvalidProfile(f"bad fuzz_id_range {self.fuzz_id_range}")
            if self.payload_distribution != "uniform":
                raise InvalidProfile(
                    f"unsupported payload distribution {self.payload_distribution!r}")
        elif self.kind == "Spoof":
            t = self.spoof_target
            if not t or "id" not in t or "payload" not in t:
                raise InvalidProfile("spoof_target needs id and payload")
            if not 0 <= int(t["id"]) <= 0x7FF:
                raise InvalidProfile(f"spoof id out of range: {t['id']:#x}")
            if float(t.get("period_us", 10_000.0)) <= 0:
                raise InvalidProfile("spoof period must be positive")
        elif self.kind == "Replay":
            if self.replay_source is None:
                raise InvalidProfile("Replay profile needs replay_source")
            if self.time_scale <= 0:
                raise InvalidProfile("time_scale must be positive")
        return self


@dataclass
class AttackHandle:
    profile: AttackProfile
    node_name: str
    active: bool = True
    started_at: int = 0
    frames_injected: int = 0
    events: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.profile.kind


class AttackerNode(BusNode):
    """Dedicated injection port on the bus."""

    def __init__(self, name: str = "attacker"):
        super().__init__(name)
        self.active_handles: dict[str, AttackHandle] = {}

    def handle_tx_started(self, engine: Engine, pending):
        # back-to-back flood: the moment one frame hits the wire, queue the
        # next so the attacker re-enters every arbitration round
        h = pending.handle
        if h is not None and h.active and h.kind == "DosFlood":
            _queue_dos_frame(engine, h)


def attach_attacker(engine: Engine, name: str = "attacker") -> AttackerNode:
    node = AttackerNode(name)
    engine.add_node(node)
    return node


def _queue_dos_frame(engine: Engine, handle: AttackHandle):
    p = handle.profile
    frame = CanFrame(p.dos_id, bytes(p.dos_dlc))
    engine.queue_tx(handle.node_name, frame, label=labels.DOS, handle=handle)
    handle.frames_injected += 1


def _spoof_payload(target: dict) -> bytes:
    payload = target["payload"]
    if isinstance(payload, str):
        return bytes.fromhex(payload)
    return bytes(payload)


def start_attack(engine: Engine, profile: AttackProfile,
                 node_name: str = "attacker") -> AttackHandle:
    profile.validate()
    node = engine.node(node_name)
    if not isinstance(node, AttackerNode):
        raise InvalidProfile(f"{node_name!r} is not an attack port")
    if profile.kind in node.active_handles:
        raise ConflictingAttack(f"{profile.kind} already active on {node_name}")
    handle = AttackHandle(profile=profile, node_name=node_name,
                          started_at=engine.now)
    node.active_handles[profile.kind] = handle

    if profile.kind == "DosFlood":
        _queue_dos_frame(engine, handle)
    elif profile.kind == "Fuzz":
        period = max(1, engine.timebase.ticks(1e6 / profile.fuzz_rate))
        stream = profile.seed_stream or f"attack/fuzz/{node_name}"
        lo, hi = profile.fuzz_id_range

        def fuzz_tick(eng, ev):
            if not handle.active:
                return
            rng = eng.rng(stream)
            frame = CanFrame(rng.randrange(lo, hi + 1),
                             bytes(rng.randrange(256) for _ in range(8)))
            eng.queue_tx(node_name, frame, label=labels.FUZZ, handle=handle)
            handle.frames_injected += 1
            handle.events.append(eng.post(eng.now + period, EventKind.ATTACK_TICK,
                                          payload={"fn": fuzz_tick}))

        handle.events.append(engine.post(engine.now + period,
                                         EventKind.ATTACK_TICK,
                                         payload={"fn": fuzz_tick}))
    elif profile.kind == "Spoof":
        target = profile.spoof_target
        spoof_id = int(target["id"])
        payload = _spoof_payload(target)
        period = engine.timebase.ticks(float(target.get("period_us", 10_000.0)))
        remaining = target.get("count")
        listeners = [name for name, other in engine.nodes.items()
                     if spoof_id in getattr(other, "rx_map", {})]
        if not listeners:
            msg = f"no node listens to spoofed id {spoof_id:#x}"
            handle.warnings.append(msg)
            warnings.warn(msg, stacklevel=2)

        def spoof_tick(eng, ev, state={"left": remaining}):
            if not handle.active:
                return
            if state["left"] is not None and state["left"] <= 0:
                return
            eng.queue_tx(node_name, CanFrame(spoof_id, payload),
                         label=labels.SPOOF, handle=handle)
            handle.frames_injected += 1
            if state["left"] is not None:
                state["left"] -= 1
                if state["left"] <= 0:
                    return
            handle.events.append(eng.post(eng.now + period, EventKind.ATTACK_TICK,
                                          payload={"fn": spoof_tick}))

        start = engine.now + engine.timebase.ticks(float(target.get("start_us", 0.0)))
        handle.events.append(engine.post(max(start, engine.now),
                                         EventKind.ATTACK_TICK,
                                         payload={"fn": spoof_tick}))
    elif profile.kind == "Replay":
        trace = profile.replay_source
        if not isinstance(trace, ReplayTrace):
            trace = load_replay(trace)
        _schedule_replay(engine, handle, trace, profile.time_scale)
    return handle


def stop_attack(engine: Engine, handle: AttackHandle):
    """Deactivate an attack; the frame already on the wire still completes."""
    if not handle.active:
        raise UnknownHandle(f"{handle.kind} handle is not active")
    handle.active = False
    for ev in handle.events:
        ev.cancelled = True
    node = engine.node(handle.node_name)
    node.active_handles.pop(handle.kind, None)
    node.tx_pending = [p for p in node.tx_pending
                       if p.handle is not handle or p.started_at is not None]


# ======================================================================
# replay traces
# ======================================================================

@dataclass
class ReplayRecord:
    timestamp: float            # seconds
    can_id: int
    dlc: int
    payload: bytes
    label: str


@dataclass
class ReplayTrace:
    records: list[ReplayRecord]
    attack_type: str | None = None

    def __len__(self):
        return len(self.records)

    def histogram(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.label] = counts.get(r.label, 0) + 1
        return counts


_FLAG_TO_LABEL = {"R": labels.BENIGN}
_T_LABELS = {labels.DOS, labels.FUZZ, labels.SPOOF}


def load_replay(source, default_attack: str | None = None) -> ReplayTrace:
    """Parse a replay CSV.

    Row format: ``timestamp,can_id_hex,dlc,b0,...,b{dlc-1},flag[,attack]``
    with flag R for benign traffic and T for injected frames.  A file-level
    ``# attack_type: <name>`` header (or the optional trailing column) maps
    T rows to their attack class.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        fh = open(source, "r")
        close = True
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        fh = source
        close = False
    else:
        fh = io.StringIO("\n".join(source))
        close = False

    attack_type = default_attack
    records: list[ReplayRecord] = []
    last_ts = None
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.lower().startswith("attack_type:"):
                    attack_type = body.split(":", 1)[1].strip().lower()
                continue
            cols = [c.strip() for c in line.split(",")]
            if len(cols) < 4:
                raise ParseError(f"too few columns ({len(cols)})", line=lineno)
            try:
                ts = float(cols[0])
                can_id = int(cols[1], 16)
                dlc = int(cols[2])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not 0 <= dlc <= 8:
                raise ParseError(f"dlc out of range: {dlc}", line=lineno)
            if not 0 <= can_id <= 0x7FF:
                raise ParseError(f"id out of range: {can_id:#x}", line=lineno)
            rest = cols[3:]
            if len(rest) < dlc + 1:
                raise ParseError(
                    f"dlc={dlc} but only {len(rest) - 1} payload bytes",
                    line=lineno)
            try:
                payload = bytes(int(b, 16) for b in rest[:dlc])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            flag = rest[dlc]
            extra = rest[dlc + 1:]
            if flag == "R":
                label = labels.BENIGN
            elif flag == "T":
                label = (extra[0].lower() if extra else attack_type)
                if label not in _T_LABELS:
                    raise ParseError(
                        "injected row without a resolvable attack type "
                        "(add a trailing column or '# attack_type:' header)",
                        line=lineno)
            else:
                raise ParseError(f"unknown flag {flag!r}", line=lineno)
            if last_ts is not None and ts < last_ts:
                raise ParseError(
                    f"timestamp decreases ({ts} after {last_ts})", line=lineno)
            last_ts = ts
            records.append(ReplayRecord(ts, can_id, dlc, payload, label))
    finally:
        if close:
            fh.close()
    if not records:
        raise EmptyTrace("no records in replay source")
    return ReplayTrace(records=records, attack_type=attack_type)


def write_replay_csv(records, timebase, path=None) -> str:
    """Inverse of load_replay for bus-log records (tick timestamps)."""
    lines = []
    for r in records:
        seconds = r.sof_time * timebase.us_per_tick / 1e6
        cols = [f"{seconds:.6f}", f"{r.can_id:04x}", str(r.dlc)]
        cols += [f"{b:02x}" for b in r.payload]
        if r.label == labels.BENIGN:
            cols.append("R")
        else:
            cols += ["T", r.label]
        lines.append(",".join(cols))
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _schedule_replay(engine: Engine, handle: AttackHandle, trace: ReplayTrace,
                     time_scale: float):
    t0 = trace.records[0].timestamp
    base = engine.now
    for rec in trace.records:
        delta_us = (rec.timestamp - t0) * 1e6 * time_scale
        at = base + engine.timebase.ticks(delta_us)

        def inject(eng, ev, rec=rec):
            if not handle.active:
                return
            eng.queue_tx(handle.node_name,
                         CanFrame(rec.can_id, rec.payload, dlc=rec.dlc),
                         label=rec.label, handle=handle)
            handle.frames_injected += 1

        handle.events.append(engine.post(at, EventKind.ATTACK_TICK,
                                         payload={"fn": inject}))


def replay(engine: Engine, trace: ReplayTrace, time_scale: float = 1.0,
           node_name: str = "attacker") -> AttackHandle:
    """Queue every trace record at scaled inter-arrival times."""
    profile = AttackProfile(kind="Replay", replay_source=trace,
                            time_scale=time_scale)
    return start_attack(engine, profile, node_name=node_name)


# ======================================================================
# heuristic tagging
# ======================================================================

def tag_known_attacks(records, dos_id: int = 0x000,
                      threshold_ticks: int | None = None) -> list[str]:
    """Quick parse of a captured log: tag flooding-based DoS, leave the rest
    Unknown.

    A record is flood-tagged when it carries the flood ID and sits within
    two nominal frame times of a neighboring frame with that same ID.
    """
    if threshold_ticks is None:
        threshold_ticks = 2 * nominal_frame_bits(8)
    times = [r.sof_time for r in records]
    ids = [r.can_id for r in records]
    out = [labels.UNKNOWN] * len(records)
    last_seen: dict[int, int] = {}
    close_prev = [False] * len(records)
    for i, (t, cid) in enumerate(zip(times, ids)):
        if cid == dos_id and cid in last_seen:
            close_prev[i] = (t - last_seen[cid]) < threshold_ticks
        last_seen[cid] = t
    for i in range(len(records)):
        if ids[i] != dos_id:
            continue
        close_next = i + 1 < len(records) and close_prev[i + 1] \
            and ids[i + 1] == dos_id
        if close_prev[i] or close_next:
            out[i] = labels.DOS
    return out
