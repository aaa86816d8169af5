"""Scenario documents: a validated configuration plus a timed script drive
one deterministic engine run and produce a reproducible report bundle.

A scenario document is JSON with a ``format_version`` field:

    {
      "format_version": 1,
      "name": "collision-demo",
      "bitrate": 500000,
      "seed": 7,
      "stop_time_us": 1000000.0,
      "nodes": [{"name": "ecu1", "role": "EngineBrake"}, ...],
      "attacks": {"flood": {"kind": "DosFlood"}},
      "ids": {"model": "model.json", "strategy": "ControllerCoupled",
              "calibration": "paper-artix7"},
      "monitor": {"poll_period_us": 300000.0, "life_watch": true,
                  "capture": {"signals": ["bus"], "from_us": 0, "to_us": 5000}},
      "script": [{"at_us": 300000.0, "do": "set_sensor", "node": "ecu3",
                  "sensor": "collision", "value": true}],
      "expect": [{"check": "actuator", "node": "ecu2",
                  "actuator": "airbag_deployed", "value": true,
                  "after_us": 300000.0, "deadline_us": 10000.0}]
    }

The report bundle written by ``run_scenario(..., out_dir=...)`` contains
``report.json``, ``bus_log.csv``, ``status_log.ndjson`` and, when configured,
``capture.vcd``, ``metrics.json`` and ``latency.json``.  Every value in the
bundle derives from virtual time and the seed, so identical inputs produce
byte-identical bundles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import labels
from .attack import AttackProfile, attach_attacker, start_attack, stop_attack
from .detector import (
    CALIBRATIONS,
    STRATEGIES,
    Detector,
    attach_detector,
    line_rate_budget_us,
)
from .ecu import ROLES, ROLE_TABLES, EcuConfig, EcuNode, default_tx_map, prog_node
from .engine import DEFAULT_BITRATE, Engine, EventKind
from .errors import CanLabError, ScriptError, ValidationError
from .frame import RECESSIVE
from .monitor import MonitorHub, compute_metrics, export_csv, export_vcd, write_status_log
from .qnn import load_model

FORMAT_VERSION = 1

SCRIPT_VERBS = ("set_sensor", "start_attack", "stop_attack",
                "prog_node", "reset_node", "capture")

CHECK_KINDS = ("actuator", "no_actuation", "life_anomaly", "no_anomalies",
               "verdict_count", "frame_count")

DEFAULT_ROSTER = (
    {"name": "ecu1", "role": "EngineBrake"},
    {"name": "ecu2", "role": "AirbagLight"},
    {"name": "ecu3", "role": "Sensors"},
    {"name": "ecu4", "role": "Lights"},
)

_PROFILE_FIELDS = ("kind", "dos_id", "dos_dlc", "fuzz_rate", "fuzz_id_range",
                   "payload_distribution", "spoof_target", "replay_source",
                   "time_scale", "seed_stream")


def _as_can_id(value) -> int:
    if isinstance(value, str):
        return int(value, 0)
    return int(value)


# ======================================================================
# configuration
# ======================================================================

@dataclass
class ScenarioConfig:
    name: str
    bitrate: int
    seed: int
    stop_time_us: float
    nodes: list[dict]
    attacks: dict[str, dict]
    ids: dict | None
    monitor: dict
    script: list[dict]
    expect: list[dict]
    base_dir: Path = field(default_factory=Path)
    raw: dict = field(default_factory=dict)

    def resolve(self, relpath) -> Path:
        path = Path(relpath)
        return path if path.is_absolute() else self.base_dir / path


def load_scenario(source) -> ScenarioConfig:
    """Parse and validate a scenario document (path, dict, stream or text)."""
    base_dir = Path(".")
    name_hint = None
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            doc = json.loads(text)
        else:
            path = Path(source)
            if not path.exists():
                raise ValidationError(f"scenario file not found: {path}")
            doc = json.loads(path.read_text())
            base_dir = path.parent
            name_hint = path.stem
    if not isinstance(doc, dict):
        raise ValidationError("scenario document must be an object")
    return _validate(doc, base_dir, name_hint)


def _validate(doc: dict, base_dir: Path, name_hint: str | None) -> ScenarioConfig:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported format_version {doc.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}")
    known = {"format_version", "name", "description", "bitrate", "seed",
             "stop_time_us", "nodes", "attacks", "ids", "monitor",
             "script", "expect"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown scenario fields: {', '.join(unknown)}")

    stop_time_us = float(doc.get("stop_time_us", 0))
    if stop_time_us <= 0:
        raise ValidationError(f"stop_time_us must be positive, got {stop_time_us}")
    bitrate = int(doc.get("bitrate", DEFAULT_BITRATE))
    if bitrate <= 0:
        raise ValidationError(f"bitrate must be positive, got {bitrate}")

    nodes = [dict(n) for n in doc.get("nodes", DEFAULT_ROSTER)]
    names = [n.get("name") for n in nodes]
    if len(set(names)) != len(names) or None in names:
        raise ValidationError(f"node names must be unique, got {names}")
    seen_ids: dict[int, str] = {}
    for position, node in enumerate(nodes):
        role = node.get("role")
        if role not in ROLES:
            raise ValidationError(f"node {node['name']!r}: unknown role {role!r}")
        index = int(node.get("index", position + 1))
        tx_map = node.get("tx_map") or default_tx_map(role, index)
        for msg, can_id in tx_map.items():
            can_id = _as_can_id(can_id)
            if can_id in seen_ids:
                raise ValidationError(
                    f"CAN id {can_id:#05x} of {node['name']}/{msg} already "
                    f"used by {seen_ids[can_id]}")
            seen_ids[can_id] = f"{node['name']}/{msg}"

    attacks = {str(k): dict(v) for k, v in (doc.get("attacks") or {}).items()}
    for aname, spec in attacks.items():
        _build_profile(spec, base_dir, f"attacks[{aname}]")

    ids = doc.get("ids")
    if ids is not None:
        ids = dict(ids)
        if "model" not in ids:
            raise ValidationError("ids config requires a model path")
        model_path = Path(ids["model"])
        if not model_path.is_absolute():
            model_path = base_dir / model_path
        if not model_path.exists():
            raise ValidationError(f"ids model file not found: {model_path}")
        strategy = ids.setdefault("strategy", "ControllerCoupled")
        if strategy not in STRATEGIES:
            raise ValidationError(f"unknown ids strategy {strategy!r}")
        calibration = ids.setdefault("calibration", "paper-artix7")
        if calibration not in CALIBRATIONS:
            raise ValidationError(f"unknown calibration {calibration!r}")

    monitor = dict(doc.get("monitor") or {})
    monitor.setdefault("poll_period_us", 300_000.0)
    monitor.setdefault("life_watch", True)
    monitor.setdefault("capture_limit", 1_000_000)
    if float(monitor["poll_period_us"]) <= 0:
        raise ValidationError("poll_period_us must be positive")
    capture = monitor.get("capture")
    if capture is not None:
        for key in ("signals", "from_us", "to_us"):
            if key not in capture:
                raise ValidationError(f"monitor.capture requires {key!r}")

    script = list(doc.get("script") or [])
    _validate_script(script, names, attacks, stop_time_us)
    expect = list(doc.get("expect") or [])
    for i, check in enumerate(expect):
        _validate_check(check, i, names)

    return ScenarioConfig(
        name=str(doc.get("name") or name_hint or "scenario"),
        bitrate=bitrate, seed=int(doc.get("seed", 0)),
        stop_time_us=stop_time_us, nodes=nodes, attacks=attacks,
        ids=ids, monitor=monitor, script=script, expect=expect,
        base_dir=base_dir, raw=doc)


def _build_profile(spec: dict, base_dir: Path, where: str) -> AttackProfile:
    unknown = sorted(set(spec) - set(_PROFILE_FIELDS))
    if unknown:
        raise ValidationError(f"{where}: unknown profile fields {unknown}")
    if "kind" not in spec:
        raise ValidationError(f"{where}: attack profile requires kind")
    kwargs = dict(spec)
    if "fuzz_id_range" in kwargs:
        lo, hi = kwargs["fuzz_id_range"]
        kwargs["fuzz_id_range"] = (_as_can_id(lo), _as_can_id(hi))
    if "dos_id" in kwargs:
        kwargs["dos_id"] = _as_can_id(kwargs["dos_id"])
    if "spoof_target" in kwargs and kwargs["spoof_target"]:
        target = dict(kwargs["spoof_target"])
        if "id" in target:
            target["id"] = _as_can_id(target["id"])
        kwargs["spoof_target"] = target
    if isinstance(kwargs.get("replay_source"), str):
        path = Path(kwargs["replay_source"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ValidationError(f"{where}: replay source not found: {path}")
        kwargs["replay_source"] = str(path)
    profile = AttackProfile(**kwargs)
    profile.validate()
    return profile


def _validate_script(script: list[dict], node_names, attacks, stop_time_us):
    started: set[str] = set()
    for i, step in enumerate(script):
        if not isinstance(step, dict):
            raise ScriptError("step must be an object", step=i)
        verb = step.get("do")
        if verb not in SCRIPT_VERBS:
            raise ScriptError(f"unknown verb {verb!r}", step=i)
        at_us = step.get("at_us")
        if at_us is None or float(at_us) < 0:
            raise ScriptError(f"at_us must be >= 0, got {at_us!r}", step=i)
        if float(at_us) > stop_time_us:
            raise ScriptError(
                f"at_us {at_us} is past stop_time_us {stop_time_us}", step=i)
        if verb in ("set_sensor", "prog_node"):
            if step.get("node") not in node_names:
                raise ScriptError(f"unknown node {step.get('node')!r}", step=i)
        if verb == "set_sensor" and "sensor" not in step:
            raise ScriptError("set_sensor requires sensor", step=i)
        if verb == "reset_node" and "node" in step and step["node"] not in node_names:
            raise ScriptError(f"unknown node {step.get('node')!r}", step=i)
        if verb == "prog_node":
            behavior = step.get("behavior")
            if not (isinstance(behavior, dict)
                    or (isinstance(behavior, str) and behavior in ROLE_TABLES)):
                raise ScriptError(f"behavior must be a table or one of "
                                  f"{sorted(ROLE_TABLES)}", step=i)
        if verb == "start_attack":
            aname = step.get("attack")
            if "profile" in step:
                pass  # validated at run time against base_dir
            elif aname not in attacks:
                raise ScriptError(f"unknown attack {aname!r}", step=i)
            started.add(aname or f"step-{i}")
        if verb == "stop_attack":
            if step.get("attack") not in started:
                raise ScriptError(
                    f"stop_attack before any start of {step.get('attack')!r}",
                    step=i)
        if verb == "capture":
            if "signals" not in step or "until_us" not in step:
                raise ScriptError("capture requires signals and until_us", step=i)


def _validate_check(check: dict, i: int, node_names):
    kind = check.get("check")
    if kind not in CHECK_KINDS:
        raise ValidationError(f"expect[{i}]: unknown check {kind!r}")
    required = {
        "actuator": ("node", "actuator", "value", "after_us", "deadline_us"),
        "no_actuation": ("node", "actuator", "value", "from_us", "to_us"),
        "life_anomaly": (),
        "no_anomalies": (),
        "verdict_count": ("label", "min"),
        "frame_count": (),
    }[kind]
    missing = [k for k in required if k not in check]
    if missing:
        raise ValidationError(f"expect[{i}]: {kind} requires {missing}")
    if kind in ("actuator", "no_actuation") and check["node"] not in node_names:
        raise ValidationError(f"expect[{i}]: unknown node {check['node']!r}")
    if kind == "verdict_count" and check["label"] not in labels.CLASSES:
        raise ValidationError(f"expect[{i}]: unknown label {check['label']!r}")


# ======================================================================
# execution
# ======================================================================

@dataclass
class ScenarioReport:
    config: ScenarioConfig
    engine: Engine
    hub: MonitorHub
    detector: Detector | None
    actuations: list[dict]
    checks: list[dict]
    passed: bool
    report: dict
    paths: dict[str, Path] | None = None


@dataclass
class ScenarioRuntime:
    """A built but not yet finished scenario: the control service drives it
    incrementally; run_scenario drives it to the stop time in one call."""
    config: ScenarioConfig
    engine: Engine
    hub: MonitorHub
    detector: Detector | None
    ecus: list[EcuNode]
    actuations: list[dict] = field(default_factory=list)
    handles: dict[str, object] = field(default_factory=dict)
    stop_tick: int = 0
    _last_actuators: dict = field(default_factory=dict)

    def scan_actuators(self):
        for node in self.ecus:
            prev = self._last_actuators[node.name]
            for key, value in node.state.actuators.items():
                if prev.get(key) != value:
                    self.actuations.append({
                        "at_us": self.engine.timebase.us(self.engine.now),
                        "node": node.name, "actuator": key, "value": value})
                    prev[key] = value

    def run_to_end(self):
        self.engine.run_until(self.stop_tick)
        self.scan_actuators()

    def finish(self) -> ScenarioReport:
        checks = [_evaluate_check(c, self.engine, self.hub, self.detector,
                                  self.actuations)
                  for c in self.config.expect]
        passed = all(c["pass"] for c in checks)
        report = _build_report(self.config, self.engine, self.hub,
                               self.detector, self.actuations, checks, passed)
        return ScenarioReport(config=self.config, engine=self.engine,
                              hub=self.hub, detector=self.detector,
                              actuations=self.actuations, checks=checks,
                              passed=passed, report=report)


def build_scenario(config: ScenarioConfig,
                   script: list[dict] | None = None) -> ScenarioRuntime:
    """Instantiate engine, nodes, monitor, detector and scripted steps."""
    if script is not None:
        node_names = [n["name"] for n in config.nodes]
        _validate_script(script, node_names, config.attacks, config.stop_time_us)
    else:
        script = config.script

    eng = Engine(bitrate=config.bitrate, seed=config.seed)
    tb = eng.timebase
    ecus: list[EcuNode] = []
    for position, spec in enumerate(config.nodes):
        periods = {"life": spec["life_period_us"]} if "life_period_us" in spec else None
        cfg = EcuConfig(node_id=spec["name"], role=spec["role"],
                        tx_map=spec.get("tx_map"), task_periods=periods,
                        behavior=spec.get("behavior"))
        node = EcuNode(cfg, index=int(spec.get("index", position + 1)))
        eng.add_node(node)
        node.start(eng)
        ecus.append(node)
    attach_attacker(eng)

    hub = MonitorHub(eng, capture_limit=int(config.monitor["capture_limit"]))
    for node in eng.nodes:
        hub.declare_signal(f"{node}.tx", initial=RECESSIVE)
    if config.monitor["life_watch"]:
        for node in ecus:
            if "life" in node.tx_map:
                hub.watch_life(node.name, node.tx_map["life"])
    capture = config.monitor.get("capture")
    if capture is not None:
        hub.configure_capture(capture["signals"],
                              (tb.ticks(float(capture["from_us"])),
                               tb.ticks(float(capture["to_us"]))))

    detector = None
    if config.ids is not None:
        model = load_model(config.resolve(config.ids["model"]))
        profile = CALIBRATIONS[config.ids["calibration"]][config.ids["strategy"]]
        detector = attach_detector(eng, Detector(model, profile, tb))

    runtime = ScenarioRuntime(
        config=config, engine=eng, hub=hub, detector=detector, ecus=ecus,
        stop_tick=tb.ticks(config.stop_time_us),
        _last_actuators={n.name: dict(n.state.actuators) for n in ecus})

    # actuator timeline, sampled after every completed frame and script step
    eng.add_frame_listener(lambda record: runtime.scan_actuators())

    for i, step in enumerate(script):
        def runner(e, ev, i=i, step=step):
            try:
                _exec_step(e, hub, config, runtime.handles, step, i)
            except CanLabError as exc:
                raise ScriptError(str(exc), step=i) from exc
            runtime.scan_actuators()
        eng.post(tb.ticks(float(step["at_us"])), EventKind.TASK_TIMER,
                 payload={"fn": runner})

    hub.start_polling(float(config.monitor["poll_period_us"]))
    return runtime


def run_scenario(config: ScenarioConfig, script: list[dict] | None = None,
                 out_dir=None) -> ScenarioReport:
    """Build the engine from the config, execute the timed script, evaluate
    the expectation checks and (optionally) write the report bundle."""
    runtime = build_scenario(config, script)
    runtime.run_to_end()
    result = runtime.finish()
    if out_dir is not None:
        result.paths = write_bundle(result, out_dir)
    return result


def _exec_step(eng: Engine, hub: MonitorHub, config: ScenarioConfig,
               handles: dict, step: dict, i: int):
    verb = step["do"]
    if verb == "set_sensor":
        eng.node(step["node"]).set_sensor(eng, step["sensor"], step["value"])
    elif verb == "start_attack":
        name = step.get("attack") or f"step-{i}"
        spec = step["profile"] if "profile" in step else config.attacks[name]
        profile = _build_profile(dict(spec), config.base_dir, f"step {i}")
        handles[name] = start_attack(eng, profile,
                                     node_name=step.get("port", "attacker"))
    elif verb == "stop_attack":
        stop_attack(eng, handles.pop(step["attack"]))
    elif verb == "prog_node":
        behavior = step["behavior"]
        table = ROLE_TABLES[behavior] if isinstance(behavior, str) else behavior
        prog_node(eng, step["node"], table)
    elif verb == "reset_node":
        eng.reset_node(step.get("node"))
    elif verb == "capture":
        hub.configure_capture(step["signals"],
                              (eng.now, eng.timebase.ticks(float(step["until_us"]))))


# ======================================================================
# expectation checks
# ======================================================================

def _in_window(t_us: float, check: dict, lo_key="from_us", hi_key="to_us") -> bool:
    lo = check.get(lo_key)
    hi = check.get(hi_key)
    return (lo is None or t_us >= float(lo)) and (hi is None or t_us <= float(hi))


def _evaluate_check(check: dict, eng, hub, detector, actuations) -> dict:
    kind = check["check"]
    result = dict(check)
    if kind == "actuator":
        lo = float(check["after_us"])
        hi = lo + float(check["deadline_us"])
        hit = next((a for a in actuations
                    if a["node"] == check["node"]
                    and a["actuator"] == check["actuator"]
                    and a["value"] == check["value"]
                    and lo <= a["at_us"] <= hi), None)
        result["pass"] = hit is not None
        result["detail"] = (f"observed at {hit['at_us']:.1f} us" if hit
                            else f"no change to {check['value']!r} in "
                                 f"({lo:.0f}, {hi:.0f}] us")
    elif kind == "no_actuation":
        hits = [a for a in actuations
                if a["node"] == check["node"]
                and a["actuator"] == check["actuator"]
                and a["value"] == check["value"]
                and _in_window(a["at_us"], check)]
        result["pass"] = not hits
        result["detail"] = (f"{len(hits)} unexpected changes" if hits
                            else "no change inside window")
    elif kind == "life_anomaly":
        tb = eng.timebase
        hits = [a for a in hub.anomalies
                if a["message"].startswith("life signal lost")
                and (check.get("node") is None or check["node"] in a["message"])
                and _in_window(tb.us(a["at"]), check)]
        result["pass"] = bool(hits)
        result["detail"] = f"{len(hits)} matching anomalies"
    elif kind == "no_anomalies":
        result["pass"] = not hub.anomalies
        result["detail"] = f"{len(hub.anomalies)} anomalies"
    elif kind == "verdict_count":
        verdicts = detector.verdicts if detector else []
        tb = eng.timebase
        n = sum(1 for v in verdicts
                if v.label == check["label"]
                and _in_window(tb.us(v.record.sof_time), check))
        result["pass"] = n >= int(check["min"])
        result["detail"] = f"{n} {check['label']} verdicts"
    elif kind == "frame_count":
        want_id = check.get("can_id")
        want_id = None if want_id is None else _as_can_id(want_id)
        tb = eng.timebase
        n = sum(1 for r in eng.bus_log
                if (want_id is None or r.can_id == want_id)
                and (check.get("label") is None or r.label == check["label"])
                and _in_window(tb.us(r.sof_time), check))
        lo = int(check.get("min", 0))
        hi = check.get("max")
        result["pass"] = n >= lo and (hi is None or n <= int(hi))
        result["detail"] = f"{n} matching frames"
    return result


# ======================================================================
# report bundle
# ======================================================================

def _label_histogram(items) -> dict[str, int]:
    out: dict[str, int] = {}
    for label in items:
        out[label] = out.get(label, 0) + 1
    return dict(sorted(out.items()))


def latency_summary(detector: Detector, timebase) -> dict:
    elapsed = [v.latency.elapsed_us for v in detector.verdicts]
    budget = line_rate_budget_us(timebase)
    summary = {
        "strategy": detector.profile.strategy,
        "count": len(elapsed),
        "budget_us": budget,
    }
    if elapsed:
        summary.update(
            min_us=min(elapsed), max_us=max(elapsed),
            mean_us=sum(elapsed) / len(elapsed),
            within_budget=sum(1 for e in elapsed if e <= budget) / len(elapsed))
    return summary


def _build_report(config, eng, hub, detector, actuations, checks, passed) -> dict:
    tb = eng.timebase
    report = {
        "format_version": FORMAT_VERSION,
        "name": config.name,
        "seed": config.seed,
        "bitrate": config.bitrate,
        "stop_time_us": config.stop_time_us,
        "frames": len(eng.bus_log),
        "frames_by_label": _label_histogram(r.label for r in eng.bus_log),
        "bus_errors": eng.stats.errors,
        "anomalies": [{"at_us": tb.us(a["at"]), "message": a["message"]}
                      for a in hub.anomalies],
        "actuations": actuations,
        "checks": checks,
        "passed": passed,
        "ids": None,
    }
    if detector is not None:
        report["ids"] = {
            "strategy": config.ids["strategy"],
            "calibration": config.ids["calibration"],
            "verdicts": len(detector.verdicts),
            "verdicts_by_label": _label_histogram(
                v.label for v in detector.verdicts),
        }
    return report


def write_bundle(result: ScenarioReport, out_dir) -> dict[str, Path]:
    """Write the report files; content is a pure function of config + seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eng, hub, detector = result.engine, result.hub, result.detector
    tb = eng.timebase
    paths: dict[str, Path] = {}

    paths["bus_log"] = out / "bus_log.csv"
    export_csv(eng.bus_log, tb, paths["bus_log"])
    paths["status_log"] = out / "status_log.ndjson"
    write_status_log(hub.status_log, paths["status_log"])

    if hub.capture_window is not None:
        lo, hi = hub.capture_window
        hi = min(hi, eng.now)
        if lo < hi:
            trace = hub.trace(sorted(hub.bit_capture), lo, hi)
            paths["capture"] = out / "capture.vcd"
            export_vcd(trace, paths["capture"])

    if detector is not None:
        paths["latency"] = out / "latency.json"
        _dump_json(latency_summary(detector, tb), paths["latency"])
        if detector.verdicts:
            metrics = compute_metrics([v.truth for v in detector.verdicts],
                                      [v.label for v in detector.verdicts])
            paths["metrics"] = out / "metrics.json"
            _dump_json(metrics.to_dict(), paths["metrics"])

    report = dict(result.report)
    report["files"] = sorted(p.name for p in paths.values()) + ["report.json"]
    paths["report"] = out / "report.json"
    _dump_json(report, paths["report"])
    return paths


def _dump_json(doc: dict, path: Path):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
