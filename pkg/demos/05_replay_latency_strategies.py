#!/usr/bin/env python3
"""Replay a captured trace through the detector under both integration
strategies and compare verdict latency against the line-rate budget.

EcuCoupled places the detector behind an ECU's application stack (verdicts
arrive after protocol handling plus firmware processing).  ControllerCoupled
taps frames at the controller, so the same model answers well inside the
time the next four frames need on the wire.
"""

import tempfile
from pathlib import Path

from canlab import (
    CALIBRATIONS,
    AttackProfile,
    Engine,
    Timebase,
    classify,
    line_rate_budget_us,
    load_model,
    load_replay,
    start_attack,
    stop_attack,
)
from canlab.attack import attach_attacker, write_replay_csv
from canlab.detector import records_from_trace
from canlab.ecu import standard_ecus
from canlab.engine import EventKind

MODEL = Path(__file__).resolve().parents[1] / "models" / "ids-int4.json"

# capture a short trace: 300 ms of normal ECU chatter, 300 ms under flood
eng = Engine(seed=5)
standard_ecus(eng, life_period_us=2_000.0)
attach_attacker(eng)
handle = {}
eng.post(eng.timebase.ticks(300_000.0), EventKind.TASK_TIMER, payload={
    "fn": lambda e, ev: handle.update(
        dos=start_attack(e, AttackProfile(kind="DosFlood")))})
eng.post(eng.timebase.ticks(600_000.0), EventKind.TASK_TIMER, payload={
    "fn": lambda e, ev: stop_attack(e, handle["dos"])})
eng.run_until(eng.timebase.ticks(700_000.0))

# round the capture through the CAR-Hacking CSV format
csv_path = Path(tempfile.mkdtemp()) / "trace.csv"
write_replay_csv(eng.bus_log, eng.timebase, csv_path)
trace = load_replay(csv_path)
print(f"trace: {len(trace.records)} rows in {csv_path.name}")

tb = Timebase(500_000)
model = load_model(MODEL)
records = records_from_trace(trace, tb)
budget = line_rate_budget_us(tb)

print(f"line-rate budget for a 4-frame window: {budget:.0f} us")
print()
results = {}
for strategy in ("EcuCoupled", "ControllerCoupled"):
    verdicts = classify(model, records,
                        CALIBRATIONS["paper-artix7"][strategy], tb)
    lat = [v.latency.elapsed_us for v in verdicts]
    within = sum(1 for x in lat if x <= budget) / len(lat)
    results[strategy] = verdicts
    print(f"{strategy:18} {len(lat)} verdicts, latency "
          f"min {min(lat):7.1f}  mean {sum(lat) / len(lat):7.1f}  "
          f"max {max(lat):7.1f} us, {within:.0%} within budget")

ecu = results["EcuCoupled"]
ctl = results["ControllerCoupled"]
assert [v.label for v in ecu] == [v.label for v in ctl]
ratio = (sum(v.latency.elapsed_us for v in ecu)
         / sum(v.latency.elapsed_us for v in ctl))
print()
print(f"identical verdict labels under both strategies; "
      f"EcuCoupled is {ratio:.2f}x slower")
