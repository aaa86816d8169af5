"""Bus and signal capture, periodic status polling, waveform/CSV export,
and classification metrics.

Capture hooks run inside the engine event loop; exports operate on
immutable snapshots afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import labels
from .errors import CaptureOverflow, EmptyTrace, UnknownSignal, ValidationError
from .frame import DOMINANT, RECESSIVE, CanFrame, encode_frame


@dataclass
class BusLogRecord:
    """One completed frame on the bus, in start-of-frame order."""

    sof_time: int               # ticks
    can_id: int
    dlc: int
    payload: bytes
    rtr: bool = False
    source: str = ""
    label: str = labels.BENIGN
    verdict: object = None      # IdsVerdict, attached once classified
    errors: int = 0             # receive errors recorded against this frame

    def to_frame(self) -> CanFrame:
        return CanFrame(can_id=self.can_id, payload=self.payload,
                        rtr=self.rtr, dlc=self.dlc, timestamp=self.sof_time)


# ======================================================================
# classification metrics
# ======================================================================

@dataclass
class MetricsReport:
    """Confusion matrix over the four classes plus the derived metrics."""

    matrix: np.ndarray          # rows = ground truth, cols = predicted
    total: int
    accuracy: float
    misclassified: int
    false_positives: int        # benign rows predicted as any attack
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "classes": list(labels.CLASSES),
            "matrix": self.matrix.tolist(),
            "total": self.total,
            "accuracy": self.accuracy,
            "misclassified": self.misclassified,
            "false_positives": self.false_positives,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def confusion_matrix(truth: Iterable[str], predicted: Iterable[str]) -> np.ndarray:
    truth = list(truth)
    predicted = list(predicted)
    if len(truth) != len(predicted):
        raise ValidationError("truth and prediction lengths differ")
    m = np.zeros((len(labels.CLASSES), len(labels.CLASSES)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        m[labels.class_index(t), labels.class_index(p)] += 1
    return m


def metrics_from_matrix(matrix) -> MetricsReport:
    m = np.asarray(matrix, dtype=np.int64)
    total = int(m.sum())
    diag = int(np.trace(m))
    precision, recall, f1 = {}, {}, {}
    for i, name in enumerate(labels.CLASSES):
        col = int(m[:, i].sum())
        row = int(m[i, :].sum())
        p = m[i, i] / col if col else 0.0
        r = m[i, i] / row if row else 0.0
        precision[name] = float(p)
        recall[name] = float(r)
        f1[name] = float(2 * p * r / (p + r)) if (p + r) else 0.0
    benign = labels.class_index(labels.BENIGN)
    fp = int(m[benign, :].sum() - m[benign, benign])
    return MetricsReport(
        matrix=m,
        total=total,
        accuracy=diag / total if total else 0.0,
        misclassified=total - diag,
        false_positives=fp,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def compute_metrics(truth: Iterable[str], predicted: Iterable[str]) -> MetricsReport:
    """Confusion matrix and accuracy/precision/recall/F1 for labeled verdicts."""
    return metrics_from_matrix(confusion_matrix(truth, predicted))


# ======================================================================
# signal capture
# ======================================================================

@dataclass
class SignalDef:
    name: str
    width: int = 1


@dataclass
class SignalTrace:
    """Change lists for named signals over [start, end) ticks."""

    start: int
    end: int
    bitrate: int
    signals: dict[str, SignalDef]
    initial: dict[str, int]
    changes: dict[str, list[tuple[int, int]]]

    @property
    def ticks(self) -> int:
        return self.end - self.start

    def samples(self, name: str) -> list[int]:
        """Per-bit-time sample vector for one signal; len == window ticks."""
        out = []
        value = self.initial[name]
        pending = list(self.changes[name])
        i = 0
        for t in range(self.start, self.end):
            while i < len(pending) and pending[i][0] <= t:
                value = pending[i][1]
                i += 1
            out.append(value)
        return out


class MonitorHub:
    """Signal registry, bounded capture buffer, status polling and anomaly
    checks for one engine."""

    def __init__(self, engine, capture_limit: int = 1_000_000):
        self.engine = engine
        engine._monitor = self
        self.capture_limit = capture_limit
        self.signals: dict[str, SignalDef] = {}
        self._values: dict[str, int] = {}
        self._changes: dict[str, list[tuple[int, int]]] = {}
        self._recorded = 0
        self.bit_capture: set[str] = set()     # signals captured at bit level
        self.capture_window: tuple[int, int] | None = None
        self.status_log: list[dict] = []
        self.checks: list[Callable] = []
        self.anomalies: list[dict] = []
        self._poll_listeners: list[Callable] = []
        self._prev_poll: dict | None = None
        self._life_watch: dict[int, str] = {}   # life can_id -> node name
        self._life_seen: dict[str, int] = {}    # node name -> frames on bus
        self._change_listeners: list[Callable] = []
        self.declare_signal("bus", width=1, initial=RECESSIVE)

    # ---------------------------------------------------------- registry

    def declare_signal(self, name: str, width: int = 1, initial: int = 0):
        if name not in self.signals:
            self.signals[name] = SignalDef(name, width)
            self._values[name] = initial
            self._changes[name] = []

    def require_signals(self, names: Iterable[str]) -> list[str]:
        names = list(names)
        unknown = [n for n in names if n not in self.signals]
        if unknown:
            raise UnknownSignal(f"unknown signals: {', '.join(unknown)}")
        return names

    def record(self, name: str, value: int, at: int | None = None):
        """Append a change sample; raises once the bounded buffer is full."""
        if self._values.get(name) == value:
            return
        at = self.engine.now if at is None else at
        self._recorded += 1
        if self._recorded > self.capture_limit:
            raise CaptureOverflow(
                f"capture buffer exceeded {self.capture_limit} samples")
        self._values[name] = value
        self._changes[name].append((at, value))
        for fn in self._change_listeners:
            fn(name, at, value)

    # ----------------------------------------------------- bit-level capture

    def configure_capture(self, signals: Iterable[str], window: tuple[int, int]):
        """Enable per-bit capture of bus/tx lines inside the window (ticks)."""
        self.bit_capture = set(self.require_signals(signals))
        self.capture_window = (int(window[0]), int(window[1]))

    def _capture_bits(self, name: str, start: int, bits: list[int]):
        lo, hi = self.capture_window
        for i, b in enumerate(bits):
            t = start + i
            if lo <= t < hi:
                self.record(name, b, at=t)

    def on_tx_start(self, engine, pending, enc, losers):
        """Engine hook at transmission start: lay the frame's levels onto the
        captured bus and tx signals."""
        if not self.bit_capture or self.capture_window is None:
            return
        sof = pending.started_at
        lo, hi = self.capture_window
        if sof >= hi or sof + len(enc.bits) <= lo:
            return
        acked = len(engine.nodes) > 1
        bus_bits = enc.bus_view() if acked else list(enc.bits)
        if "bus" in self.bit_capture:
            self._capture_bits("bus", sof, bus_bits)
        tx_name = f"{pending.source}.tx"
        if tx_name in self.bit_capture:
            self._capture_bits(tx_name, sof, enc.bits)
            # line idles recessive after the frame
            if sof + len(enc.bits) < hi:
                self.record(tx_name, RECESSIVE, at=sof + len(enc.bits))
        for loser in losers:
            lname = f"{loser.source}.tx"
            if lname not in self.bit_capture:
                continue
            prefix = self._loser_prefix(loser.frame, pending.frame)
            self._capture_bits(lname, sof, prefix)
            if sof + len(prefix) < hi:
                self.record(lname, RECESSIVE, at=sof + len(prefix))

    @staticmethod
    def _loser_prefix(loser_frame, winner_frame) -> list[int]:
        """Levels a loser drives before dropping out.

        Both transmitters stuff identically while their streams agree, so the
        drop point is the first stuffed-stream index where the loser sends
        recessive against the winner's dominant; the loser stops driving after
        sampling that lost bit.
        """
        lbits = encode_frame(loser_frame).bits
        wbits = encode_frame(winner_frame).bits
        for i, (lb, wb) in enumerate(zip(lbits, wbits)):
            if lb == RECESSIVE and wb == DOMINANT:
                return lbits[:i + 1]
        return list(lbits)

    def trace(self, signals: Iterable[str], start: int, end: int) -> SignalTrace:
        names = self.require_signals(signals)
        if end <= start:
            raise ValidationError(f"empty capture window [{start}, {end})")
        initial, changes = {}, {}
        for n in names:
            value = RECESSIVE if n == "bus" or n.endswith(".tx") else 0
            pre = [c for c in self._changes[n] if c[0] < start]
            if pre:
                value = pre[-1][1]
            initial[n] = value
            changes[n] = [c for c in self._changes[n] if start <= c[0] < end]
        return SignalTrace(start=start, end=end, bitrate=self.engine.bitrate,
                           signals={n: self.signals[n] for n in names},
                           initial=initial, changes=changes)

    # ------------------------------------------------------------ polling

    def add_check(self, fn: Callable):
        """fn(prev_status, status) -> anomaly message or None; run per poll."""
        self.checks.append(fn)

    def add_poll_listener(self, fn: Callable):
        self._poll_listeners.append(fn)

    def add_change_listener(self, fn: Callable):
        """fn(signal_name, at_tick, value) on every recorded change."""
        self._change_listeners.append(fn)

    def watch_life(self, node_name: str, can_id: int):
        """Track life frames as observed on the bus itself. A node starved by
        arbitration keeps incrementing its internal counter, so starvation is
        only visible in the on-bus frame count."""
        if not self._life_watch:
            self.engine.add_frame_listener(self._count_life_frame)
            self.add_check(self._bus_life_check)
        self._life_watch[int(can_id)] = node_name
        self._life_seen.setdefault(node_name, 0)

    def _count_life_frame(self, record):
        name = self._life_watch.get(record.can_id)
        if name is not None:
            self._life_seen[name] += 1

    def _bus_life_check(self, prev: dict | None, status: dict):
        if prev is None or "life_seen" not in prev:
            return None
        lost = [name for name, count in status["life_seen"].items()
                if prev["life_seen"].get(name, 0) >= count]
        if lost:
            return "life signal lost: " + ", ".join(sorted(lost))
        return None

    def start_polling(self, period_us: float = 300_000.0):
        from .engine import EventKind
        if period_us <= 0:
            raise ValidationError(f"poll period must be positive, got {period_us}")
        period = self.engine.timebase.ticks(period_us)

        def poll(engine, ev):
            self._poll(engine)
            engine.post(engine.now + period, EventKind.MONITOR_POLL,
                        payload={"fn": poll})

        self.engine.post(self.engine.now + period, EventKind.MONITOR_POLL,
                         payload={"fn": poll})

    def _poll(self, engine):
        status = {
            "at": engine.now,
            "at_us": engine.timebase.us(engine.now),
            "nodes": {name: node.snapshot() for name, node in engine.nodes.items()},
            "anomalies": [],
        }
        if self._life_watch:
            status["life_seen"] = dict(self._life_seen)
        for check in self.checks:
            msg = check(self._prev_poll, status)
            if msg:
                status["anomalies"].append(msg)
                self.anomalies.append({"at": engine.now, "message": msg})
        self.status_log.append(status)
        self._prev_poll = status
        for fn in self._poll_listeners:
            fn(status)


def life_signal_check(prev: dict | None, status: dict):
    """Flag any ECU whose life counter failed to advance since the last poll."""
    if prev is None:
        return None
    stalled = []
    for name, snap in status["nodes"].items():
        if "life_counter" not in snap:
            continue
        before = prev["nodes"].get(name, {}).get("life_counter")
        if before is not None and snap["life_counter"] - before <= 0:
            stalled.append(name)
    if stalled:
        return f"life signal lost: {', '.join(sorted(stalled))}"
    return None


# ======================================================================
# exports
# ======================================================================

def export_vcd(trace: SignalTrace, path=None) -> str:
    """Render a capture window as a value-change-dump document.

    The timescale is 1 ns; change timestamps are ticks x the bit duration,
    so every timestamp maps exactly back to a bit boundary.
    """
    if not trace.signals:
        raise EmptyTrace("no signals in trace")
    if trace.ticks <= 0:
        raise EmptyTrace("empty capture window")
    ns_per_tick = round(1e9 / trace.bitrate)
    ids = {}
    for i, name in enumerate(trace.signals):
        ids[name] = chr(33 + i) if i < 94 else f"<{i}>"

    out = []
    out.append("$version canlab capture $end")
    out.append(f"$comment bit_time_ns={ns_per_tick} bitrate={trace.bitrate} $end")
    out.append("$timescale 1 ns $end")
    out.append("$scope module canlab $end")
    for name, sig in trace.signals.items():
        safe = name.replace(" ", "_")
        out.append(f"$var wire {sig.width} {ids[name]} {safe} $end")
    out.append("$upscope $end")
    out.append("$enddefinitions $end")

    def fmt(name, value):
        if trace.signals[name].width == 1:
            return f"{value}{ids[name]}"
        return f"b{value:b} {ids[name]}"

    out.append("$dumpvars")
    for name in trace.signals:
        out.append(fmt(name, trace.initial[name]))
    out.append("$end")

    merged: dict[int, list[str]] = {}
    for name in trace.signals:
        for tick, value in trace.changes[name]:
            merged.setdefault(tick, []).append(fmt(name, value))
    for tick in sorted(merged):
        out.append(f"#{(tick - trace.start) * ns_per_tick}")
        out.extend(merged[tick])
    out.append(f"#{trace.ticks * ns_per_tick}")

    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def export_csv(records: list[BusLogRecord], timebase, path=None) -> str:
    """Write a bus log in the replay CSV format (see attack module)."""
    from .attack import write_replay_csv
    return write_replay_csv(records, timebase, path)


def write_status_log(status_log: list[dict], path) -> None:
    """Line-delimited JSON, one record per poll."""
    with open(path, "w") as fh:
        for status in status_log:
            fh.write(json.dumps(status, sort_keys=True) + "\n")
