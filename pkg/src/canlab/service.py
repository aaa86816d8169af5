"""Network control plane for the simulator.

One service instance hosts one scenario at a time.  Clients speak a line
protocol: each line (or WebSocket text message) is a JSON document.

    command   {"op": "run", "id": 7, "args": {...}}
    response  {"id": 7, "ok": true, "result": {...}}
    error     {"id": 7, "ok": false, "error": {"code": "UnknownOp", ...}}
    stream    {"stream": "bus_log", "seq": 42, "record": {...}}

Ops: sys_ctrl, att_ctrl, prog_node, reset_node, debug_config, monitor,
bus_log, signal_capture, user_capture, load_scenario, run, pause, step.
All engine mutations execute on a single pump thread; subscribers get
per-connection bounded buffers and are disconnected if they fall behind,
so a slow reader can never stall the simulation.

Transports: raw TCP on ``port`` and HTTP on ``http_port`` (WebSocket upgrade
at ``/ws``, static files for the browser console elsewhere).  When the
``CANLAB_TOKEN`` environment variable (or the ``token`` argument) is set,
the first document on every connection must be
``{"op": "auth", "args": {"token": ...}}``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import queue
import socket
import threading
import time
from pathlib import Path

from .attack import start_attack, stop_attack
from .ecu import ROLE_TABLES, prog_node
from .errors import (
    AuthError,
    CanLabError,
    EngineBusy,
    UnknownHandle,
    UnknownOp,
    ValidationError,
)
from .scenario import ScenarioRuntime, _build_profile, build_scenario, load_scenario

OPS = ("sys_ctrl", "att_ctrl", "prog_node", "reset_node", "debug_config",
       "monitor", "bus_log", "signal_capture", "user_capture",
       "load_scenario", "run", "pause", "step")

STREAM_OPS = ("monitor", "bus_log", "signal_capture", "user_capture")

DEFAULT_PORT = 8700

_SLICE_US = 10_000.0        # virtual time advanced per pump iteration
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def _dump(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def _closer(sock: socket.socket):
    """Close function safe to call from a thread blocked elsewhere on recv."""
    def close():
        try:
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        sock.close()
    return close


# ======================================================================
# connections
# ======================================================================

class _Connection:
    """One client session over either transport; owns a bounded outbound
    queue drained by a dedicated writer thread."""

    def __init__(self, service: "ControlService", send_fn, close_fn, label: str):
        self.service = service
        self._send_fn = send_fn
        self._close_fn = close_fn
        self.label = label
        self.outbound: queue.Queue = queue.Queue(maxsize=service.stream_buffer)
        self.subs: dict[str, dict] = {}
        self.authed = service.token is None
        self.alive = True
        self._writer = threading.Thread(target=self._drain, daemon=True)
        self._writer.start()

    def _drain(self):
        while True:
            doc = self.outbound.get()
            if doc is None or not self.alive:
                break
            try:
                self._send_fn(_dump(doc))
            except OSError:
                break
        self.alive = False
        try:
            self._close_fn()
        except OSError:
            pass

    def reply(self, doc: dict):
        """Queue a command response; a full buffer ends the session."""
        try:
            self.outbound.put(doc, timeout=1.0)
        except queue.Full:
            self.kill()

    def push_stream(self, doc: dict) -> bool:
        """Queue a stream record without ever blocking the engine."""
        try:
            self.outbound.put_nowait(doc)
            return True
        except queue.Full:
            self.kill()
            return False

    def finish_after(self, doc: dict):
        """Send one last document, flush, then close."""
        try:
            self.outbound.put(doc, timeout=1.0)
            self.outbound.put(None, timeout=1.0)
        except queue.Full:
            self.kill()

    def kill(self):
        self.alive = False
        try:
            self.outbound.put_nowait(None)
        except queue.Full:
            pass
        try:
            self._close_fn()
        except OSError:
            pass

    # ------------------------------------------------------------ dispatch

    def handle_line(self, line: str):
        try:
            cmd = json.loads(line)
        except json.JSONDecodeError as exc:
            self.reply(_error(None, ValidationError(f"bad json: {exc}")))
            return
        if not isinstance(cmd, dict):
            self.reply(_error(None, ValidationError("command must be an object")))
            return
        req_id = cmd.get("id")
        op = cmd.get("op")
        args = cmd.get("args") or {}

        if op == "auth":
            if self.service.token is None or args.get("token") == self.service.token:
                self.authed = True
                self.reply({"id": req_id, "ok": True,
                            "result": {"authenticated": True}})
            else:
                self.finish_after(_error(req_id, AuthError("bad token")))
            return
        if not self.authed:
            self.reply(_error(req_id, AuthError("authenticate first")))
            return
        if op not in OPS:
            self.reply(_error(req_id, UnknownOp(f"unknown op {op!r}")))
            return
        try:
            if op in STREAM_OPS:
                self.service._subscribe(self, op, args, req_id)
            else:
                result = self.service._submit(op, args)
                self.reply({"id": req_id, "ok": True, "result": result})
        except CanLabError as exc:
            self.reply(_error(req_id, exc))
        except Exception as exc:      # engine fault: report, do not hang
            self.reply({"id": req_id, "ok": False,
                        "error": {"code": "InternalError", "message": str(exc)}})


def _error(req_id, exc: Exception) -> dict:
    return {"id": req_id, "ok": False,
            "error": {"code": type(exc).__name__, "message": str(exc)}}


# ======================================================================
# service
# ======================================================================

class ControlService:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 http_port: int | None = None, token: str | None = None,
                 static_dir=None, realtime: bool = False, speed: float = 1.0,
                 stream_buffer: int = 1024):
        self.host = host
        self.port = port
        self.http_port = (port + 1 if port else 0) if http_port is None else http_port
        self.token = token if token is not None else os.environ.get("CANLAB_TOKEN")
        self.static_dir = Path(static_dir) if static_dir else None
        self.realtime = realtime
        self.speed = speed
        self.stream_buffer = stream_buffer

        self.runtime: ScenarioRuntime | None = None
        self.last_report: dict | None = None
        self._finished = False
        self._running = False
        self._run_target = 0
        self._wall_ref: tuple[float, float] | None = None
        self._attacks: dict[str, object] = {}
        self._attack_seq = 0

        self._commands: queue.Queue = queue.Queue()
        self._conns: list[_Connection] = []
        self._conn_lock = threading.Lock()
        self._seq: dict[str, int] = {}
        self._alive = False
        self._threads: list[threading.Thread] = []
        self._tcp_srv: socket.socket | None = None
        self._http_srv: socket.socket | None = None

    # ---------------------------------------------------------- lifecycle

    def start(self) -> "ControlService":
        self._alive = True
        self._tcp_srv = self._listen(self.port)
        self.port = self._tcp_srv.getsockname()[1]
        self._http_srv = self._listen(self.http_port)
        self.http_port = self._http_srv.getsockname()[1]
        for fn in (self._pump, self._accept_tcp, self._accept_http):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _listen(self, port: int) -> socket.socket:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((self.host, port))
        srv.listen(16)
        return srv

    def close(self):
        self._alive = False
        for srv in (self._tcp_srv, self._http_srv):
            if srv is not None:
                try:
                    srv.close()
                except OSError:
                    pass
        with self._conn_lock:
            conns = list(self._conns)
        for conn in conns:
            conn.kill()

    # --------------------------------------------------------- pump thread

    def _pump(self):
        while self._alive:
            try:
                fn, done, result = self._commands.get(
                    timeout=0.0005 if self._running else 0.05)
                try:
                    result["value"] = fn()
                except Exception as exc:   # delivered to the caller
                    result["error"] = exc
                done.set()
                continue
            except queue.Empty:
                pass
            if self._running and self.runtime is not None:
                self._advance()

    def _advance(self):
        eng = self.runtime.engine
        tb = eng.timebase
        target = min(self._run_target, eng.now + tb.ticks(_SLICE_US))
        try:
            eng.run_until(target)
        except CanLabError as exc:
            self._running = False
            self._emit("monitor", {"type": "error", "code": type(exc).__name__,
                                   "message": str(exc)})
            return
        self._maybe_finish()
        if eng.now >= self._run_target:
            self._running = False
            self._emit("monitor", {"type": "paused", "at_us": tb.us(eng.now)})
        elif self.realtime and self._wall_ref is not None:
            sim_t0, wall_t0 = self._wall_ref
            lag = (tb.us(eng.now) - sim_t0) / 1e6 / self.speed \
                - (time.monotonic() - wall_t0)
            if lag > 0:
                time.sleep(min(lag, 0.05))

    def _maybe_finish(self):
        rt = self.runtime
        if rt is None or self._finished or rt.engine.now < rt.stop_tick:
            return
        self._finished = True
        rt.scan_actuators()
        report = rt.finish()
        self.last_report = report.report
        self._emit("monitor", {"type": "finished", "passed": report.passed,
                               "report": report.report})

    def _submit(self, op: str, args: dict):
        done = threading.Event()
        result: dict = {}
        self._commands.put((lambda: self._dispatch(op, args), done, result))
        if not done.wait(timeout=30.0):
            raise EngineBusy("command timed out")
        if "error" in result:
            raise result["error"]
        return result["value"]

    # ----------------------------------------------------------- commands

    def _dispatch(self, op: str, args: dict):
        return getattr(self, f"_op_{op}")(args)

    def _need_runtime(self) -> ScenarioRuntime:
        if self.runtime is None:
            raise ValidationError("no scenario loaded")
        return self.runtime

    def _op_load_scenario(self, args: dict):
        if self._running:
            raise EngineBusy("pause before loading a scenario")
        if "path" in args:
            config = load_scenario(args["path"])
        elif "document" in args:
            config = load_scenario(dict(args["document"]))
        else:
            raise ValidationError("load_scenario needs path or document")
        runtime = build_scenario(config, args.get("script"))
        self.runtime = runtime
        self.last_report = None
        self._finished = False
        self._attacks = {}
        self._attack_seq = 0
        self._install_hooks(runtime)
        return {"name": config.name, "stop_time_us": config.stop_time_us,
                "seed": config.seed, "bitrate": config.bitrate,
                "nodes": [n["name"] for n in config.nodes],
                "ids": config.ids is not None}

    def _install_hooks(self, runtime: ScenarioRuntime):
        tb = runtime.engine.timebase

        def on_frame(record):
            self._emit("bus_log", {
                "at_us": tb.us(record.sof_time), "can_id": record.can_id,
                "dlc": record.dlc, "payload": record.payload.hex(),
                "source": record.source, "label": record.label})

        runtime.engine.add_frame_listener(on_frame)
        runtime.hub.add_poll_listener(
            lambda status: self._emit("monitor", {"type": "status", **status}))
        runtime.hub.add_change_listener(
            lambda name, at, value: self._emit(
                "signal", {"signal": name, "at": at,
                           "at_us": tb.us(at), "value": value}))
        if runtime.detector is not None:
            def on_verdict(verdict):
                self._emit("monitor", {
                    "type": "verdict",
                    "at_us": tb.us(verdict.latency.verdict_time),
                    "sof_us": tb.us(verdict.record.sof_time),
                    "can_id": verdict.record.can_id,
                    "label": verdict.label, "truth": verdict.truth,
                    "elapsed_us": verdict.latency.elapsed_us,
                    "probabilities": [round(float(p), 6)
                                      for p in verdict.probabilities]})
            runtime.detector.listeners.append(on_verdict)

    def _op_run(self, args: dict):
        rt = self._need_runtime()
        tb = rt.engine.timebase
        target = (tb.ticks(float(args["until_us"])) if "until_us" in args
                  else rt.stop_tick)
        if target <= rt.engine.now:
            return {"running": False, "now_us": tb.us(rt.engine.now)}
        self._run_target = target
        self._wall_ref = (tb.us(rt.engine.now), time.monotonic())
        self._running = True
        return {"running": True, "until_us": tb.us(target)}

    def _op_pause(self, args: dict):
        rt = self._need_runtime()
        self._running = False
        return {"running": False, "now_us": rt.engine.timebase.us(rt.engine.now)}

    def _op_step(self, args: dict):
        rt = self._need_runtime()
        if self._running:
            raise EngineBusy("pause before stepping")
        eng = rt.engine
        if "until_us" in args:
            eng.run_until(eng.timebase.ticks(float(args["until_us"])))
            stepped = None
        else:
            stepped = 0
            for _ in range(int(args.get("events", 1))):
                if eng.step() is None:
                    break
                stepped += 1
        self._maybe_finish()
        out = {"now_us": eng.timebase.us(eng.now)}
        if stepped is not None:
            out["events"] = stepped
        return out

    def _op_sys_ctrl(self, args: dict):
        action = args.get("action", "status")
        if action == "status":
            return self._status_doc()
        if action == "report":
            if self.last_report is None:
                raise ValidationError("no finished run to report")
            return self.last_report
        rt = self._need_runtime()
        if action == "set_sensor":
            node = rt.engine.node(str(args.get("node")))
            node.set_sensor(rt.engine, str(args.get("sensor")), args.get("value"))
            rt.engine.run_until(rt.engine.now)   # settle same-tick sense work
            rt.scan_actuators()
            return {"node": node.name, "sensors": dict(node.state.sensors)}
        if action == "set_life_period":
            period = float(args.get("period_us", 0))
            if period <= 0:
                raise ValidationError("period_us must be positive")
            node = rt.engine.node(str(args.get("node")))
            node.life_period_us = period
            return {"node": node.name, "life_period_us": period}
        raise ValidationError(f"unknown sys_ctrl action {action!r}")

    def _status_doc(self) -> dict:
        doc = {"running": self._running, "finished": self._finished,
               "scenario": None, "attacks": self._attack_list()}
        if self.runtime is not None:
            eng = self.runtime.engine
            doc.update(scenario=self.runtime.config.name,
                       now_us=eng.timebase.us(eng.now),
                       stop_time_us=self.runtime.config.stop_time_us,
                       frames=len(eng.bus_log),
                       nodes=eng.snapshot()["nodes"])
        return doc

    def _op_att_ctrl(self, args: dict):
        rt = self._need_runtime()
        action = args.get("action", "start")
        if action == "start":
            if "profile" in args:
                spec = dict(args["profile"])
            elif args.get("attack") in rt.config.attacks:
                spec = dict(rt.config.attacks[args["attack"]])
            else:
                raise ValidationError("att_ctrl needs profile or a named attack")
            profile = _build_profile(spec, rt.config.base_dir, "att_ctrl")
            handle = start_attack(rt.engine, profile,
                                  node_name=args.get("port", "attacker"))
            self._attack_seq += 1
            handle_id = f"{profile.kind.lower()}-{self._attack_seq}"
            self._attacks[handle_id] = handle
            tb = rt.engine.timebase
            self._emit("monitor", {"type": "attack", "action": "start",
                                   "handle": handle_id, "kind": profile.kind,
                                   "at_us": tb.us(rt.engine.now)})
            return {"handle": handle_id, "kind": profile.kind}
        if action == "stop":
            handle_id = args.get("handle")
            if handle_id not in self._attacks:
                raise UnknownHandle(f"unknown attack handle {handle_id!r}")
            handle = self._attacks.pop(handle_id)
            stop_attack(rt.engine, handle)
            tb = rt.engine.timebase
            self._emit("monitor", {"type": "attack", "action": "stop",
                                   "handle": handle_id, "kind": handle.kind,
                                   "at_us": tb.us(rt.engine.now)})
            return {"stopped": handle_id, "frames_injected": handle.frames_injected}
        if action == "list":
            return {"attacks": self._attack_list()}
        raise ValidationError(f"unknown att_ctrl action {action!r}")

    def _attack_list(self) -> list[dict]:
        return [{"handle": hid, "kind": h.kind, "active": h.active,
                 "frames_injected": h.frames_injected}
                for hid, h in self._attacks.items()]

    def _op_prog_node(self, args: dict):
        rt = self._need_runtime()
        behavior = args.get("behavior")
        if isinstance(behavior, str):
            if behavior not in ROLE_TABLES:
                raise ValidationError(f"unknown behavior {behavior!r}")
            table = ROLE_TABLES[behavior]
        elif isinstance(behavior, dict):
            table = behavior
        else:
            raise ValidationError("behavior must be a table or role name")
        prog_node(rt.engine, str(args.get("node")), table)
        return {"node": args.get("node"), "programmed": True}

    def _op_reset_node(self, args: dict):
        rt = self._need_runtime()
        rt.engine.reset_node(args.get("node"))
        rt.scan_actuators()
        return {"reset": args.get("node") or "all"}

    def _op_debug_config(self, args: dict):
        rt = self._need_runtime()
        hub = rt.hub
        if "capture_limit" in args:
            hub.capture_limit = int(args["capture_limit"])
        if "capture" in args:
            cap = args["capture"]
            tb = rt.engine.timebase
            start = tb.ticks(float(cap.get("from_us", tb.us(rt.engine.now))))
            hub.configure_capture(cap["signals"],
                                  (start, tb.ticks(float(cap["until_us"]))))
        return {"capture_limit": hub.capture_limit,
                "capture_window": list(hub.capture_window or ()),
                "signals": sorted(hub.bit_capture)}

    # ------------------------------------------------------- subscriptions

    def _subscribe(self, conn: _Connection, op: str, args: dict, req_id):
        if op == "signal_capture":
            if "until_us" not in args or "signals" not in args:
                raise ValidationError("signal_capture needs signals and until_us")
            self._submit("debug_config", {"capture": args})
            conn.subs["signal"] = {"signals": set(args["signals"])}
        elif op == "user_capture":
            names = list(args.get("signals") or [])
            if not names:
                raise ValidationError("user_capture needs signals")
            self._submit("_require_signals", {"signals": names})
            conn.subs["signal"] = {"signals": set(names)}
        else:
            conn.subs[op] = {}
        with self._conn_lock:
            if conn not in self._conns:
                self._conns.append(conn)
        conn.reply({"id": req_id, "ok": True, "result": {"subscribed": op}})

    def _op__require_signals(self, args: dict):
        self._need_runtime().hub.require_signals(args["signals"])
        return {}

    def _emit(self, channel: str, doc: dict):
        seq = self._seq.get(channel, 0) + 1
        self._seq[channel] = seq
        with self._conn_lock:
            conns = list(self._conns)
        for conn in conns:
            if not conn.alive:
                with self._conn_lock:
                    if conn in self._conns:
                        self._conns.remove(conn)
                continue
            sub = conn.subs.get(channel)
            if sub is None:
                continue
            if channel == "signal" and doc["signal"] not in sub["signals"]:
                continue
            key = "record" if channel == "bus_log" else "event"
            conn.push_stream({"stream": channel, "seq": seq, key: doc})

    # ------------------------------------------------------- tcp transport

    def _accept_tcp(self):
        while self._alive:
            try:
                sock, addr = self._tcp_srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_tcp, args=(sock, addr),
                                 daemon=True)
            t.start()

    def _serve_tcp(self, sock: socket.socket, addr):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_lock = threading.Lock()

        def send_line(text: str):
            with send_lock:
                sock.sendall(text.encode() + b"\n")

        conn = _Connection(self, send_line, _closer(sock), f"tcp:{addr[1]}")
        try:
            buf = b""
            while conn.alive:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if line.strip():
                        conn.handle_line(line.decode())
                if len(buf) > 1_000_000:
                    break
        except OSError:
            pass
        finally:
            conn.kill()
            with self._conn_lock:
                if conn in self._conns:
                    self._conns.remove(conn)

    # ------------------------------------------------- http / ws transport

    def _accept_http(self):
        while self._alive:
            try:
                sock, addr = self._http_srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_http, args=(sock, addr),
                                 daemon=True)
            t.start()

    def _serve_http(self, sock: socket.socket, addr):
        try:
            head = _read_until(sock, b"\r\n\r\n", limit=16384)
            if head is None:
                sock.close()
                return
            request, headers = _parse_request(head)
            if request is None:
                sock.close()
                return
            method, path = request
            if headers.get("upgrade", "").lower() == "websocket":
                self._serve_ws(sock, addr, headers)
            elif method in ("GET", "HEAD"):
                self._serve_static(sock, method, path)
            else:
                _http_response(sock, 405, b"method not allowed")
        except OSError:
            pass

    def _serve_static(self, sock: socket.socket, method: str, path: str):
        if self.static_dir is None:
            _http_response(sock, 404, b"no static content configured")
            return
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        base = self.static_dir.resolve()
        if not target.is_relative_to(base) or not target.is_file():
            _http_response(sock, 404, b"not found")
            return
        body = target.read_bytes()
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        _http_response(sock, 200, b"" if method == "HEAD" else body, ctype,
                       length=len(body))

    def _serve_ws(self, sock: socket.socket, addr, headers: dict):
        key = headers.get("sec-websocket-key")
        if not key:
            _http_response(sock, 400, b"missing websocket key")
            return
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")
        send_lock = threading.Lock()

        def send_line(text: str):
            with send_lock:
                sock.sendall(_ws_frame(0x1, text.encode()))

        conn = _Connection(self, send_line, _closer(sock), f"ws:{addr[1]}")
        try:
            parts: list[bytes] = []
            while conn.alive:
                frame = _ws_read_frame(sock)
                if frame is None:
                    break
                fin, opcode, payload = frame
                if opcode == 0x8:          # close
                    with send_lock:
                        sock.sendall(_ws_frame(0x8, b""))
                    break
                if opcode == 0x9:          # ping
                    with send_lock:
                        sock.sendall(_ws_frame(0xA, payload))
                    continue
                if opcode in (0x0, 0x1, 0x2):
                    parts.append(payload)
                    if fin:
                        text = b"".join(parts).decode()
                        parts = []
                        if text.strip():
                            conn.handle_line(text)
        except OSError:
            pass
        finally:
            conn.kill()
            with self._conn_lock:
                if conn in self._conns:
                    self._conns.remove(conn)


# ======================================================================
# http / websocket plumbing
# ======================================================================

def _read_until(sock: socket.socket, marker: bytes, limit: int) -> bytes | None:
    buf = b""
    while marker not in buf:
        if len(buf) > limit:
            return None
        chunk = sock.recv(4096)
        if not chunk:
            return None
        buf += chunk
    return buf


def _parse_request(head: bytes):
    lines = head.split(b"\r\n")
    try:
        method, path, _version = lines[0].decode().split(" ", 2)
    except ValueError:
        return None, {}
    headers = {}
    for raw in lines[1:]:
        if b":" in raw:
            name, value = raw.split(b":", 1)
            headers[name.decode().strip().lower()] = value.decode().strip()
    return (method, path), headers


def _http_response(sock: socket.socket, code: int, body: bytes,
                   ctype: str = "text/plain; charset=utf-8",
                   length: int | None = None):
    reason = {200: "OK", 400: "Bad Request", 404: "Not Found",
              405: "Method Not Allowed"}[code]
    head = (f"HTTP/1.1 {code} {reason}\r\n"
            f"Content-Type: {ctype}\r\n"
            f"Content-Length: {length if length is not None else len(body)}\r\n"
            f"Connection: close\r\n\r\n")
    try:
        sock.sendall(head.encode() + body)
    finally:
        sock.close()


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _ws_read_frame(sock: socket.socket):
    head = _recv_exact(sock, 2)
    if head is None:
        return None
    fin = bool(head[0] & 0x80)
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        ext = _recv_exact(sock, 2)
        if ext is None:
            return None
        length = int.from_bytes(ext, "big")
    elif length == 127:
        ext = _recv_exact(sock, 8)
        if ext is None:
            return None
        length = int.from_bytes(ext, "big")
    mask = _recv_exact(sock, 4) if masked else None
    payload = _recv_exact(sock, length) if length else b""
    if payload is None:
        return None
    if mask:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return fin, opcode, payload


def _ws_frame(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 65536:
        head += bytes([126]) + n.to_bytes(2, "big")
    else:
        head += bytes([127]) + n.to_bytes(8, "big")
    return head + payload


def serve(host: str = "127.0.0.1", port: int = DEFAULT_PORT, **kw) -> ControlService:
    """Start a service instance and return it (callers own shutdown)."""
    return ControlService(host=host, port=port, **kw).start()
