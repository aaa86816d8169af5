"""Virtual ECU runtime: periodic tasks, event-driven sensor handling, CAN
rx/tx and life-signal emission.

Behavior is data, not code: each role is a small table mapping received
messages and sensor changes to actions.  Loading a replacement table into a
node stands in for downloading new application software to a board.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .engine import BusNode, Engine, EventKind
from .errors import UnknownSensor, ValidationError
from .frame import CanFrame

# Message-ID map; priorities put safety messages ahead of life signals.
MESSAGE_IDS = {
    "collision": 0x050,
    "brake": 0x0A0,
    "light": 0x120,
}
LIFE_BASE = 0x300
DEFAULT_LIFE_PERIOD_US = 10_000.0   # one life frame per 10 ms of sim time

ROLES = ("EngineBrake", "AirbagLight", "Sensors", "Lights", "IdsNode", "Custom")

ACTUATOR_DEFAULTS = {
    "engine_enabled": True,
    "tcu_enabled": True,
    "airbag_deployed": False,
    "headlights": False,
    "tail_lights": False,
    "brake_lights": False,
    "braking_active": False,
}

SENSOR_DEFAULTS = {
    "collision": False,
    "brake_pedal": False,
    "ambient_light": "high",
}

# Action verbs:
#   ["set", actuator, value]        assign a constant on message receipt
#   ["set_from_payload", actuator]  assign payload[0] != 0
#   ["latch", actuator]             set True on a truthy payload, never clear
#   ["emit_event", msg]             one-shot frame when a sensor turns truthy
#   ["emit_bool", msg, interp]      frame carrying the interpreted sensor value
ROLE_TABLES = {
    "EngineBrake": {
        "rx": {
            "collision": [["set", "engine_enabled", False],
                          ["set", "tcu_enabled", False]],
            "brake": [["set_from_payload", "braking_active"]],
        },
        "sensors": {},
    },
    "AirbagLight": {
        "rx": {
            "collision": [["latch", "airbag_deployed"]],
        },
        "sensors": {
            "ambient_light": [["emit_bool", "light", "dark"]],
        },
    },
    "Sensors": {
        "rx": {},
        "sensors": {
            "collision": [["emit_event", "collision"]],
            "brake_pedal": [["emit_bool", "brake", "truthy"]],
        },
    },
    "Lights": {
        "rx": {
            "light": [["set_from_payload", "headlights"],
                      ["set_from_payload", "tail_lights"]],
            "brake": [["set_from_payload", "brake_lights"]],
        },
        "sensors": {},
    },
    "IdsNode": {"rx": {}, "sensors": {}},
}

_VERBS = {"set": 3, "set_from_payload": 2, "latch": 2,
          "emit_event": 2, "emit_bool": 3}


def validate_behavior_table(table: dict, tx_map: dict[str, int]) -> dict:
    """Check a behavior table's vocabulary before it goes live on a node."""
    if not isinstance(table, dict):
        raise ValidationError("behavior table must be a mapping")
    unknown = set(table) - {"rx", "sensors"}
    if unknown:
        raise ValidationError(f"unknown table sections: {sorted(unknown)}")
    for section in ("rx", "sensors"):
        for trigger, actions in table.get(section, {}).items():
            if section == "rx" and trigger not in MESSAGE_IDS:
                raise ValidationError(f"unknown rx message {trigger!r}")
            for action in actions:
                if not action or action[0] not in _VERBS:
                    raise ValidationError(
                        f"unknown action verb in {section}/{trigger}: {action!r}")
                if len(action) != _VERBS[action[0]]:
                    raise ValidationError(
                        f"bad arity for {action[0]} in {section}/{trigger}")
                verb = action[0]
                if verb in ("set", "set_from_payload", "latch"):
                    if action[1] not in ACTUATOR_DEFAULTS:
                        raise ValidationError(f"unknown actuator {action[1]!r}")
                if verb in ("emit_event", "emit_bool"):
                    if action[1] not in tx_map:
                        raise ValidationError(
                            f"{action[1]!r} not in this node's tx map")
    return table


def _interp(mode: str, value) -> bool:
    if mode == "dark":
        return value in ("low", "dark", "night") or value is True
    if isinstance(value, str):
        return value.lower() in ("true", "on", "1", "yes", "high", "pressed")
    return bool(value)


def default_tx_map(role: str, index: int) -> dict[str, int]:
    tx = {"life": LIFE_BASE + index}
    if role == "Sensors":
        tx["collision"] = MESSAGE_IDS["collision"]
        tx["brake"] = MESSAGE_IDS["brake"]
    elif role == "AirbagLight":
        tx["light"] = MESSAGE_IDS["light"]
    return tx


@dataclass
class EcuConfig:
    node_id: str
    role: str
    tx_map: dict[str, int] | None = None
    task_periods: dict[str, float] | None = None   # microseconds
    processing_cost: str | None = None
    behavior: dict | None = None                   # Custom role table

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        if self.role == "Custom" and self.behavior is None:
            raise ValidationError("Custom role requires a behavior table")
        for name, period in (self.task_periods or {}).items():
            if period <= 0:
                raise ValidationError(
                    f"task period {name!r} must be positive, got {period}")


@dataclass
class EcuState:
    life_counter: int = 0
    actuators: dict = field(default_factory=lambda: dict(ACTUATOR_DEFAULTS))
    sensors: dict = field(default_factory=dict)
    rx_queue: list = field(default_factory=list)


class EcuNode(BusNode):
    """One functional ECU attached to the bus."""

    RX_QUEUE_LIMIT = 64

    def __init__(self, config: EcuConfig, index: int = 0):
        super().__init__(config.node_id)
        self.config = config
        self.index = index
        self.tx_map = dict(config.tx_map or default_tx_map(config.role, index))
        if config.role == "Custom":
            table = config.behavior
        else:
            table = ROLE_TABLES[config.role]
        self.table = validate_behavior_table(copy.deepcopy(table), self.tx_map)
        periods = config.task_periods or {}
        self.life_period_us = periods.get("life", DEFAULT_LIFE_PERIOD_US)
        self.state = self._fresh_state()
        self._pending_sense: list[tuple[str, object, object]] = []

    def _fresh_state(self) -> EcuState:
        state = EcuState()
        state.sensors = {name: SENSOR_DEFAULTS[name]
                         for name in self.table.get("sensors", {})}
        return state

    # --------------------------------------------------------------- wiring

    @property
    def rx_map(self) -> dict[int, str]:
        return {MESSAGE_IDS[msg]: msg for msg in self.table.get("rx", {})}

    def start(self, engine: Engine):
        if "life" in self.tx_map:
            period = engine.timebase.ticks(self.life_period_us)
            engine.post(engine.now + period, EventKind.TASK_TIMER,
                        target=self.name, payload={"task": "life"})

    # ---------------------------------------------------------------- tasks

    def handle_task(self, engine: Engine, task):
        name = task["task"] if isinstance(task, dict) else task
        if name == "life":
            self.emit_life_signal(engine)
            period = engine.timebase.ticks(self.life_period_us)
            engine.post(engine.now + period, EventKind.TASK_TIMER,
                        target=self.name, payload={"task": "life"})
        elif name == "sense":
            self._process_sense(engine)

    def emit_life_signal(self, engine: Engine) -> CanFrame:
        """Queue the periodic status frame; payload is the pre-increment
        counter, so the first emission carries 0."""
        frame = CanFrame(self.tx_map["life"],
                         self.state.life_counter.to_bytes(4, "big"))
        engine.queue_tx(self.name, frame, msg_name="life")
        self.state.life_counter += 1
        return frame

    def set_sensor(self, engine: Engine, sensor: str, value):
        if sensor not in self.table.get("sensors", {}):
            raise UnknownSensor(
                f"{self.name} ({self.config.role}) has no sensor {sensor!r}")
        old = self.state.sensors.get(sensor)
        self.state.sensors[sensor] = value
        if old != value:
            self._pending_sense.append((sensor, old, value))
            engine.post(engine.now, EventKind.TASK_TIMER, target=self.name,
                        payload={"task": "sense"})

    def _process_sense(self, engine: Engine):
        pending, self._pending_sense = self._pending_sense, []
        for sensor, _old, new in pending:
            for action in self.table["sensors"].get(sensor, []):
                self._run_action(engine, action, sensor_value=new)

    # ------------------------------------------------------------------- rx

    def handle_delivery(self, engine: Engine, record):
        self.state.rx_queue.append(record)
        if len(self.state.rx_queue) > self.RX_QUEUE_LIMIT:
            self.state.rx_queue.pop(0)
        msg = self.rx_map.get(record.can_id)
        if msg is None:
            return
        for action in self.table["rx"].get(msg, []):
            self._run_action(engine, action, payload=record.payload)

    # -------------------------------------------------------------- actions

    def _run_action(self, engine, action, payload=None, sensor_value=None):
        verb = action[0]
        if verb == "set":
            self.state.actuators[action[1]] = action[2]
        elif verb == "set_from_payload":
            self.state.actuators[action[1]] = bool(payload and payload[0])
        elif verb == "latch":
            if payload and payload[0]:
                self.state.actuators[action[1]] = True
        elif verb == "emit_event":
            if _interp("truthy", sensor_value):
                self._emit(engine, action[1], True)
        elif verb == "emit_bool":
            self._emit(engine, action[1], _interp(action[2], sensor_value))

    def _emit(self, engine: Engine, msg: str, on: bool):
        # tx ownership: a node only ever transmits IDs from its own map
        can_id = self.tx_map[msg]
        frame = CanFrame(can_id, b"\x01" if on else b"\x00")
        engine.queue_tx(self.name, frame, msg_name=msg)

    # ------------------------------------------------------------- lifecycle

    def reset(self, engine: Engine):
        super().reset(engine)
        self.state = self._fresh_state()
        self._pending_sense.clear()

    def snapshot(self) -> dict:
        snap = super().snapshot()
        snap.update({
            "role": self.config.role,
            "life_counter": self.state.life_counter,
            "actuators": dict(self.state.actuators),
            "sensors": dict(self.state.sensors),
        })
        return snap


def step_task(engine: Engine, node_name: str, task: str):
    """Run one named task on a node immediately (outside its own timers)."""
    engine.node(node_name).handle_task(engine, {"task": task})


def set_sensor(engine: Engine, node_name: str, sensor: str, value):
    engine.node(node_name).set_sensor(engine, sensor, value)


def prog_node(engine: Engine, node_name: str, table: dict):
    """Load a replacement behavior table into a node."""
    node = engine.node(node_name)
    node.table = validate_behavior_table(copy.deepcopy(table), node.tx_map)


def standard_ecus(engine: Engine, life_period_us: float | None = None):
    """The four functional ECUs, attached and started."""
    periods = {"life": life_period_us} if life_period_us else None
    nodes = []
    for i, role in enumerate(["EngineBrake", "AirbagLight", "Sensors", "Lights"]):
        cfg = EcuConfig(node_id=f"ecu{i + 1}", role=role, task_periods=periods)
        node = EcuNode(cfg, index=i + 1)
        engine.add_node(node)
        node.start(engine)
        nodes.append(node)
    return nodes
