#!/usr/bin/env python3
"""Drive the control service over its TCP line protocol: load a scenario,
subscribe to streams, launch an attack mid-run, and read the final report.

The same operations are what the web console issues over WebSocket; this
script is the wire protocol with nothing between you and the documents.
"""

import json
import socket
from pathlib import Path

from canlab import serve

SCENARIO = (Path(__file__).resolve().parents[1]
            / "scenarios" / "table3-brake.json")


class Client:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=30)
        self.buf = b""
        self.next_id = 0

    def send(self, doc):
        self.sock.sendall(json.dumps(doc).encode() + b"\n")

    def recv(self):
        while b"\n" not in self.buf:
            self.buf += self.sock.recv(65536)
        line, self.buf = self.buf.split(b"\n", 1)
        return json.loads(line)

    def call(self, op, **args):
        self.next_id += 1
        self.send({"op": op, "id": self.next_id, "args": args})
        while True:
            doc = self.recv()
            if doc.get("id") == self.next_id:
                assert doc["ok"], doc
                return doc.get("result"), doc
            yield_stream(doc)


streams = {"monitor": 0, "bus_log": 0}


def yield_stream(doc):
    chan = doc.get("stream")
    if chan in streams:
        streams[chan] += 1
        event = doc.get("event") or doc.get("record")
        if chan == "monitor" and event.get("type") in (
                "attack", "verdict", "finished"):
            if event["type"] == "verdict" and streams["monitor"] % 25:
                return   # sample the feed, it is chatty
            print(f"  [{chan}] {json.dumps(event)[:110]}")


svc = serve(host="127.0.0.1", port=0)
print(f"service on tcp {svc.port} / http {svc.http_port}")

c = Client(svc.port)
info, _ = c.call("load_scenario", path=str(SCENARIO))
print(f"loaded {info['name']}: stop at {info['stop_time_us']:.0f} us, "
      f"nodes {info['nodes']}")

c.call("monitor")
c.call("bus_log")

# run the first half, inject a flood, then run to completion
c.call("run", until_us=info["stop_time_us"] / 2)
while True:
    doc = c.recv()
    yield_stream(doc)
    if doc.get("stream") == "monitor" and \
            (doc.get("event") or {}).get("type") == "paused":
        break

handle, _ = c.call("att_ctrl", action="start",
                   profile={"kind": "DosFlood"})
print(f"attack handle: {handle['handle']}")

# let the flood run for 100 ms of bus time, then withdraw it
c.call("run", until_us=info["stop_time_us"] / 2 + 100_000.0)
while True:
    doc = c.recv()
    yield_stream(doc)
    if doc.get("stream") == "monitor" and \
            (doc.get("event") or {}).get("type") == "paused":
        break

status, _ = c.call("sys_ctrl", action="status")
print(f"mid-run: t={status['now_us']:.0f} us, "
      f"attacks {status['attacks']}, frames {status['frames']}")

c.call("att_ctrl", action="stop", handle=handle["handle"])
c.call("run")
report = None
while report is None:
    doc = c.recv()
    yield_stream(doc)
    if doc.get("stream") == "monitor":
        ev = doc.get("event") or {}
        if ev.get("type") == "finished":
            report = ev["report"]

print()
print(f"finished: {'PASS' if report['passed'] else 'FAIL'} "
      f"({report['frames']} frames, "
      f"{streams['bus_log']} bus records streamed, "
      f"{streams['monitor']} monitor events)")
for check in report["checks"]:
    print(f"  [{'ok' if check['pass'] else 'FAIL':4}] "
          f"{check['check']}: {check['detail']}")

by_label = report["ids"]["verdicts_by_label"]
print(f"detector verdicts by label: {by_label}")
print("the run still passes its functional checks (the flood left enough "
      "slack for life and brake frames) while every injected frame was "
      "flagged as dos")
assert by_label.get("dos", 0) > 300
