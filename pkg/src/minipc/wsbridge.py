"""JSON-over-WebSocket bridge for the human debug console.

Serves `ws://host:port/ws` plus plain-HTTP `GET /state` (the latest
register snapshot) and, optionally, the console's static files.  Every
state-mutating command funnels through the same DebugSession the RSP
server uses; whichever controller connects first holds run-control and
the other side gets read-only snapshots.
"""

from __future__ import annotations

import http
import json
import mimetypes
import queue
import threading
from pathlib import Path

from websockets.datastructures import Headers
from websockets.http11 import Response
from websockets.sync.server import serve

from . import core
from .asm import disassemble_range
from .monitor import RunState, StateError
from .rsp import DebugSession

MAX_READMEM = 4096
MAX_DISASM = 64


def _state_event(machine) -> dict:
    return {"event": "state", "regs": machine.regs_snapshot()}


class WsBridge:
    def __init__(self, session: DebugSession, host: str = "127.0.0.1",
                 port: int = 9001, static_dir=None):
        self.session = session
        self.ctx = session.ctx
        self.host = host
        self.static_dir = Path(static_dir) if static_dir else None
        self._server = serve(self._handler, host, port,
                             process_request=self._process_request)
        self.port = self._server.socket.getsockname()[1]
        self._thread: threading.Thread | None = None

    def describe(self) -> str:
        return f"ws {self.host}:{self.port}/ws (+ GET /state)"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="ws-bridge", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()

    # --- plain HTTP ---------------------------------------------------------

    def _snapshot_state(self) -> dict:
        if self.ctx.loop_alive:
            return self.ctx.post(lambda c: _state_event(c.machine))
        return _state_event(self.ctx.machine)

    def _process_request(self, connection, request):
        path = request.path.split("?", 1)[0]
        if path == "/ws":
            return None                      # proceed with the WS handshake
        if path == "/state":
            body = json.dumps(self._snapshot_state())
            resp = connection.respond(http.HTTPStatus.OK, body)
            resp.headers["Content-Type"] = "application/json"
            return resp
        if self.static_dir is not None:
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (self.static_dir / rel).resolve()
            if (target.is_file()
                    and str(target).startswith(str(self.static_dir.resolve()))):
                body = target.read_bytes()
                ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
                headers = Headers()
                headers["Content-Type"] = ctype
                headers["Content-Length"] = str(len(body))
                headers["Connection"] = "close"
                return Response(http.HTTPStatus.OK, "OK", headers, body)
        return connection.respond(http.HTTPStatus.NOT_FOUND, "not found\n")

    # --- WebSocket ----------------------------------------------------------

    def _handler(self, ws) -> None:
        events = self.ctx.add_listener()
        acquired = False
        if self.ctx.controller is None:
            self.ctx.controller = "ws"
            acquired = True
        stop_pump = threading.Event()

        def pump():
            while not stop_pump.is_set():
                try:
                    ev = events.get(timeout=0.1)
                except queue.Empty:
                    continue
                try:
                    ws.send(json.dumps(ev))
                    if ev.get("event") == "stopped":
                        ws.send(json.dumps(self._snapshot_state()))
                except Exception:
                    return

        pump_thread = threading.Thread(target=pump, name="ws-pump", daemon=True)
        pump_thread.start()
        try:
            ws.send(json.dumps({
                "event": "stopped",
                "reason": (self.ctx.stop_reason.value
                           if self.ctx.run_state is RunState.FROZEN
                           and self.ctx.stop_reason else "running"),
                "pc": self.ctx.machine.pc,
            }))
            ws.send(json.dumps(self._snapshot_state()))
            for message in ws:
                reply = self._handle(message, acquired)
                if reply is not None:
                    ws.send(json.dumps(reply))
        finally:
            stop_pump.set()
            self.ctx.remove_listener(events)
            if acquired:
                self.ctx.controller = None
            pump_thread.join(timeout=2)

    def _handle(self, message, is_controller: bool):
        try:
            msg = json.loads(message)
            cmd = msg["cmd"]
        except (json.JSONDecodeError, TypeError, KeyError):
            return {"event": "error", "message": "malformed JSON command"}
        s = self.session
        try:
            if cmd in ("continue", "step", "pause", "reset",
                       "setbp", "clearbp", "writemem") and not is_controller:
                return {"event": "error", "message": "run-control held by another client"}

            if cmd == "readmem":
                addr, n = int(msg["addr"]), int(msg["len"])
                if not 0 < n <= MAX_READMEM:
                    return {"event": "error", "message": f"len must be 1..{MAX_READMEM}"}
                data = s.read_mem(addr, n)
                if data is None:
                    return {"event": "error", "message": "unmapped or protected address"}
                return {"event": "mem", "addr": addr, "bytes": data.hex()}

            if cmd == "disasm":
                addr, count = int(msg["addr"]), int(msg["count"])
                if not 0 < count <= MAX_DISASM:
                    return {"event": "error", "message": f"count must be 1..{MAX_DISASM}"}
                data = s.read_mem(addr, 4 * count)
                if data is None:
                    return {"event": "error", "message": "unmapped or protected address"}
                lines = [{"addr": a, "text": t}
                         for a, t in disassemble_range(data, addr)]
                return {"event": "disasm", "lines": lines}

            if cmd == "writemem":
                addr = int(msg["addr"])
                try:
                    data = bytes.fromhex(msg["bytes"])
                except (ValueError, TypeError):
                    return {"event": "error", "message": "bad hex"}
                if not s.write_mem(addr, data):
                    return {"event": "error", "message": "unmapped or protected address"}
                return {"event": "mem", "addr": addr, "bytes": data.hex()}

            if cmd == "setbp":
                r = s.set_breakpoint(int(msg["addr"]))
                if r == "exists":
                    return {"event": "error", "message": "exists"}
                if r == "fail":
                    return {"event": "error", "message": "unmapped or protected address"}
                return {"event": "bp", "addr": int(msg["addr"]), "set": True}

            if cmd == "clearbp":
                r = s.clear_breakpoint(int(msg["addr"]))
                if r == "fail":
                    return {"event": "error", "message": "unmapped or protected address"}
                return {"event": "bp", "addr": int(msg["addr"]), "set": False}

            if cmd == "pause":
                if not s.is_frozen():
                    s.drain_events()
                    s.freeze()
                    s.wait_stop()
                return None          # the stopped event arrives via the pump

            if cmd == "step":
                s.step_once()
                return None

            if cmd == "continue":
                s.continue_()
                return None

            if cmd == "reset":
                s.reset()
                return {"event": "stopped", "reason": "reset",
                        "pc": self.ctx.machine.pc}

            return {"event": "error", "message": f"unknown command {cmd!r}"}
        except StateError as e:
            return {"event": "error", "message": str(e)}
        except (KeyError, ValueError, TypeError) as e:
            return {"event": "error", "message": f"bad arguments: {e}"}
