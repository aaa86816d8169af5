"""canlab: deterministic bit-time simulator of a multi-ECU CAN security testbed.

Virtual wired-AND bus with bit-accurate CAN 2.0A framing, functional ECU
models, attack injection (flooding, fuzzing, spoofing, replay), a quantised
integer MLP intrusion detector with two integration strategies, full-
resolution monitoring (VCD / CSV / metrics), and a scriptable control
service with CLI and web console front-ends.
"""

from .attack import (
    AttackHandle,
    AttackProfile,
    load_replay,
    start_attack,
    stop_attack,
)
from .detector import (
    CALIBRATIONS,
    CostProfile,
    Detector,
    IdsVerdict,
    classify,
    evaluate,
    line_rate_budget_us,
    windows_from_records,
)
from .engine import BusNode, Engine, Timebase, resolve_bus
from .frame import (
    CanFrame,
    FrameBitstream,
    arbitration_winner,
    decode_frame,
    encode_frame,
    frame_bits,
    frame_duration_us,
    nominal_frame_bits,
    worst_case_frame_bits,
    worst_case_frame_us,
)
from .monitor import MetricsReport, MonitorHub, metrics_from_matrix
from .qnn import (
    QuantMlpModel,
    load_model,
    mlp_infer,
    quantise_model,
    save_model,
    train_reference,
)
from .scenario import ScenarioConfig, build_scenario, load_scenario, run_scenario
from .service import ControlService, serve

__version__ = "0.1.0"

__all__ = [
    "AttackHandle",
    "AttackProfile",
    "BusNode",
    "CALIBRATIONS",
    "CanFrame",
    "ControlService",
    "CostProfile",
    "Detector",
    "Engine",
    "FrameBitstream",
    "IdsVerdict",
    "MetricsReport",
    "MonitorHub",
    "QuantMlpModel",
    "ScenarioConfig",
    "Timebase",
    "arbitration_winner",
    "build_scenario",
    "classify",
    "decode_frame",
    "encode_frame",
    "evaluate",
    "frame_bits",
    "frame_duration_us",
    "line_rate_budget_us",
    "load_model",
    "load_replay",
    "load_scenario",
    "metrics_from_matrix",
    "mlp_infer",
    "nominal_frame_bits",
    "quantise_model",
    "resolve_bus",
    "run_scenario",
    "save_model",
    "serve",
    "start_attack",
    "stop_attack",
    "train_reference",
    "windows_from_records",
    "worst_case_frame_bits",
    "worst_case_frame_us",
    "__version__",
]
