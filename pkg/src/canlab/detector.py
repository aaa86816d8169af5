"""Detection pipeline: feature extraction, the 4-message sliding window,
strategy cost profiles with latency accounting, online classification inside
the engine, and offline trace evaluation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import labels
from .engine import Engine, EventKind
from .errors import ModelNotLoaded, ValidationError
from .frame import worst_case_frame_bits
from .monitor import MetricsReport, compute_metrics
from .qnn import QuantMlpModel, mlp_infer, softmax

WINDOW_SIZE = 4
FEATURE_BYTES_PER_MSG = 10
FEATURE_LEN = WINDOW_SIZE * FEATURE_BYTES_PER_MSG

STRATEGIES = ("EcuCoupled", "ControllerCoupled")


def extract_features(record) -> bytes:
    """Per-message contribution: 2-byte big-endian ID then the payload
    zero-padded to 8 bytes."""
    payload = bytes(record.payload)[:8]
    return record.can_id.to_bytes(2, "big") + payload + bytes(8 - len(payload))


class FeatureWindow:
    """FIFO of the 4 most recent message contributions."""

    def __init__(self):
        self._slots: deque[bytes] = deque(maxlen=WINDOW_SIZE)

    def push(self, record):
        self._slots.append(extract_features(record))

    @property
    def full(self) -> bool:
        return len(self._slots) == WINDOW_SIZE

    def features(self) -> np.ndarray:
        if not self.full:
            raise ValidationError("window not full yet")
        return np.frombuffer(b"".join(self._slots), dtype=np.uint8).copy()

    def reset(self):
        self._slots.clear()


# ----------------------------------------------------------------- latencies

@dataclass
class CostProfile:
    """Per-strategy processing costs in microseconds, applied after the
    frame's worst-case receive window."""

    strategy: str
    rx_to_feature: float
    feature_to_infer: float
    infer: float
    postprocess: float

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        for name in ("rx_to_feature", "feature_to_infer", "infer", "postprocess"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def processing_us(self) -> float:
        return (self.rx_to_feature + self.feature_to_infer
                + self.infer + self.postprocess)


# Calibration reproducing the published end-to-end totals on the reference
# hardware: 5056 us when the detector runs as ECU software, 794 us when it
# sits beside the CAN controller.  Only the totals are measured figures; the
# component split is this artifact's documented apportionment (the inference
# step is identical in both because both run the same detector core), with
# the receive window fixed at the worst-case frame time (296 us at 500 kbit/s
# for dlc 8).
CALIBRATIONS = {
    "paper-artix7": {
        "EcuCoupled": CostProfile(
            strategy="EcuCoupled",
            rx_to_feature=2560.0,     # interrupt, buffering and software copy
            feature_to_infer=1400.0,  # driver-level staging into the core
            infer=300.0,
            postprocess=500.0,        # result readback and reporting
        ),
        "ControllerCoupled": CostProfile(
            strategy="ControllerCoupled",
            rx_to_feature=80.0,       # direct rx-buffer tap
            feature_to_infer=38.0,
            infer=300.0,
            postprocess=80.0,
        ),
    },
}


@dataclass
class LatencyRecord:
    sof_time: int        # ticks
    verdict_time: int    # ticks
    elapsed_us: float

    def validate(self, timebase):
        if self.verdict_time < self.sof_time:
            raise ValidationError("verdict precedes start of frame")
        want = timebase.us(self.verdict_time - self.sof_time)
        if abs(want - self.elapsed_us) > 1e-9:
            raise ValidationError("elapsed does not match tick delta")
        return self


@dataclass
class IdsVerdict:
    label: str
    probabilities: np.ndarray
    latency: LatencyRecord
    record: object = None
    truth: str | None = None

    def validate(self):
        p = self.probabilities
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValidationError("probabilities do not sum to 1")
        if (p < 0).any() or (p > 1).any():
            raise ValidationError("probabilities outside [0, 1]")
        if labels.CLASSES[int(np.argmax(p))] != self.label:
            raise ValidationError("label is not the argmax class")
        return self

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "probabilities": [float(v) for v in self.probabilities],
            "sof_time": self.latency.sof_time,
            "verdict_time": self.latency.verdict_time,
            "elapsed_us": self.latency.elapsed_us,
            "truth": self.truth,
        }


def line_rate_budget_us(timebase, dlc: int = 8) -> float:
    """Latency budget for keeping up with four back-to-back worst-case
    frames (the window depth) at the current bitrate."""
    return WINDOW_SIZE * timebase.us(worst_case_frame_bits(dlc))


# -------------------------------------------------------------- classification

class Detector:
    """Sliding-window classifier bound to one strategy's cost profile."""

    def __init__(self, model: QuantMlpModel | None, profile: CostProfile,
                 timebase):
        self.model = model
        self.profile = profile
        self.timebase = timebase
        self.window = FeatureWindow()
        self.verdicts: list[IdsVerdict] = []
        self.listeners = []
        self._seen = 0

    def observe(self, record) -> IdsVerdict | None:
        """Feed one completed frame; returns a verdict once warmed up."""
        if self.model is None:
            raise ModelNotLoaded("no detector model loaded")
        self.window.push(record)
        self._seen += 1
        if not self.window.full:
            return None
        logits = mlp_infer(self.model, self.window.features())
        probs = softmax(logits)
        label = self.model.classes[int(np.argmax(probs))]
        receive_ticks = worst_case_frame_bits(record.dlc)
        cost_ticks = self.timebase.ticks(self.profile.processing_us)
        verdict_time = record.sof_time + receive_ticks + cost_ticks
        latency = LatencyRecord(
            sof_time=record.sof_time,
            verdict_time=verdict_time,
            elapsed_us=self.timebase.us(verdict_time - record.sof_time),
        ).validate(self.timebase)
        verdict = IdsVerdict(label=label, probabilities=probs,
                             latency=latency, record=record,
                             truth=getattr(record, "label", None)).validate()
        return verdict

    def reset(self):
        self.window.reset()
        self._seen = 0


def attach_detector(engine: Engine, detector: Detector) -> Detector:
    """Classify live bus traffic; verdicts land at their modeled latency."""

    def on_frame(record):
        verdict = detector.observe(record)
        if verdict is None:
            return

        def deliver(eng, ev):
            record.verdict = verdict
            detector.verdicts.append(verdict)
            for fn in detector.listeners:
                fn(verdict)

        engine.post(verdict.latency.verdict_time, EventKind.PROCESSING_DONE,
                    payload={"fn": deliver})

    engine.add_frame_listener(on_frame)
    return detector


def classify(model: QuantMlpModel, records, profile: CostProfile,
             timebase) -> list[IdsVerdict]:
    """Offline: one verdict per frame after the 3-frame warm-up."""
    det = Detector(model, profile, timebase)
    out = []
    for record in records:
        verdict = det.observe(record)
        if verdict is not None:
            out.append(verdict)
    return out


def evaluate(model: QuantMlpModel, records, timebase,
             profile: CostProfile | None = None) -> MetricsReport:
    """Confusion metrics over a labeled trace; each window takes the label
    of its newest frame."""
    profile = profile or CALIBRATIONS["paper-artix7"]["ControllerCoupled"]
    verdicts = classify(model, records, profile, timebase)
    truth = [v.truth for v in verdicts]
    predicted = [v.label for v in verdicts]
    return compute_metrics(truth, predicted)


def records_from_trace(trace, timebase):
    """Bus-log records (tick timestamps) from a loaded replay trace."""
    from .monitor import BusLogRecord

    t0 = trace.records[0].timestamp
    out = []
    for rec in trace.records:
        ticks = timebase.ticks((rec.timestamp - t0) * 1e6)
        out.append(BusLogRecord(sof_time=ticks, can_id=rec.can_id,
                                dlc=rec.dlc, payload=rec.payload,
                                source="replay", label=rec.label))
    return out


def windows_from_records(records, window: int = WINDOW_SIZE):
    """(features, label) pairs for training: sliding window, newest-frame
    label."""
    feats = []
    labs = []
    fw = FeatureWindow()
    for record in records:
        fw.push(record)
        if fw.full:
            feats.append(fw.features())
            labs.append(labels.class_index(record.label))
    if not feats:
        return np.zeros((0, FEATURE_LEN), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    return np.stack(feats), np.asarray(labs, dtype=np.int64)
