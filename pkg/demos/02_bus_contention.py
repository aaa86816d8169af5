#!/usr/bin/env python3
"""Three nodes start transmitting in the same bit time; arbitration sorts
them out without losing a single frame.

The bus is a wired AND: any node driving dominant (0) wins the bit.  A node
that sends recessive (1) but reads back dominant has lost arbitration, backs
off, and retries after the winner finishes.
"""

from canlab import BusNode, CanFrame, Engine, resolve_bus


class Silent(BusNode):
    def handle_delivery(self, engine, record):
        pass


class Observer(BusNode):
    def handle_delivery(self, engine, record):
        t_us = engine.timebase.us(record.sof_time)
        print(f"  t={t_us:8.1f} us  id=0x{record.can_id:03X} "
              f"from {record.source}")


print("wired-AND truth table (0=dominant, 1=recessive, None=idle):")
for drivers in ((0, 1), (1, 1), (None, None), (0, None), (1, None)):
    print(f"  {drivers!r:14} -> {resolve_bus(drivers)}")
print()

eng = Engine(seed=1)
for name in ("telemetry", "brake", "diagnostics"):
    eng.add_node(Silent(name))
eng.add_node(Observer("observer"))

# all three queued before the first bit: lowest id must win each round
eng.queue_tx("telemetry", CanFrame(0x300, b"\x01"))
eng.queue_tx("brake", CanFrame(0x0A0, b"\x02"))
eng.queue_tx("diagnostics", CanFrame(0x6F0, b"\x03"))

print("delivery order under contention:")
eng.run_until(eng.timebase.ticks(2_000.0))

ids = [r.can_id for r in eng.bus_log]
assert ids == sorted(ids), "arbitration must serialize by priority"
print()
print(f"all {len(ids)} frames delivered, priority order {ids == sorted(ids)}")
