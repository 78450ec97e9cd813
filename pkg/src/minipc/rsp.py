"""Remote-serial-protocol debug stub.

Checksummed `$<payload>#<2 hex>` framing over TCP, one client at a time.
All guest access goes through the monitor's command queue, so every
command keeps working after the guest has been frozen by a protection
fault; session state lives on the monitor side of the fence.

Framing escapes '}', '$', '#' as '}' + (byte ^ 0x20); the checksum is the
byte sum (mod 256) of the escaped payload as transmitted.
"""

from __future__ import annotations

import queue
import socket
import threading

from . import core, isa
from .machine import Machine
from .monitor import MonitorCtx, MonitorMode, RunState, StateError, StopKind

ESCAPE = 0x7D
SPECIALS = frozenset((0x7D, 0x24, 0x23))   # } $ #
INTERRUPT = 0x03

STOP_CODES = {
    StopKind.BREAKPOINT: b"S05",
    StopKind.STEP: b"S05",
    StopKind.PROTECTION_FAULT: b"S0B",
    StopKind.DOUBLE_FAULT: b"S06",
    StopKind.PAUSE: b"S02",
}

BRK_WORD = isa.encode(isa.Instruction(isa.BRK)).to_bytes(4, "little")


def checksum(data: bytes) -> int:
    return sum(data) & 0xFF


def escape(payload: bytes) -> bytes:
    out = bytearray()
    for b in payload:
        if b in SPECIALS:
            out += bytes((ESCAPE, b ^ 0x20))
        else:
            out.append(b)
    return bytes(out)


def unescape(data: bytes) -> bytes:
    out = bytearray()
    i = 0
    while i < len(data):
        if data[i] == ESCAPE and i + 1 < len(data):
            out.append(data[i + 1] ^ 0x20)
            i += 2
        else:
            out.append(data[i])
            i += 1
    return bytes(out)


def frame(payload: bytes) -> bytes:
    esc = escape(payload)
    return b"$" + esc + b"#" + b"%02x" % checksum(esc)


class RspParser:
    """Incremental packet parser over arbitrary stream chunking.

    feed() yields events: ("packet", payload), ("bad_checksum", raw),
    ("ack",), ("nak",), ("interrupt",).
    """

    def __init__(self):
        self.buf = bytearray()

    def feed(self, data: bytes):
        self.buf += data
        events = []
        while self.buf:
            b = self.buf[0]
            if b == ord("+"):
                events.append(("ack",))
                del self.buf[0]
                continue
            if b == ord("-"):
                events.append(("nak",))
                del self.buf[0]
                continue
            if b == INTERRUPT:
                events.append(("interrupt",))
                del self.buf[0]
                continue
            if b != ord("$"):
                del self.buf[0]   # garbage between packets
                continue
            end = self.buf.find(b"#")
            if end < 0 or len(self.buf) < end + 3:
                break             # need more
            body = bytes(self.buf[1:end])
            csum = bytes(self.buf[end + 1:end + 3])
            del self.buf[:end + 3]
            # strictly lowercase hex: otherwise a case-flip corruption of a
            # checksum digit would go undetected
            if any(c not in b"0123456789abcdef" for c in csum):
                events.append(("bad_checksum", body))
                continue
            want = int(csum, 16)
            if checksum(body) != want:
                events.append(("bad_checksum", body))
                continue
            events.append(("packet", unescape(body)))
        return events


class DebugSession:
    """Monitor-side debugging state machine shared by the wire servers.

    Breakpoints are software BRK patches; the table survives guest faults
    because it lives here, not in guest memory.
    """

    REGS = 10   # r0..r7, pc, flags

    def __init__(self, ctx: MonitorCtx):
        self.ctx = ctx
        if ctx.mode is MonitorMode.BARE:
            raise StateError("debug stub requires a VMM mode")
        self.breakpoints: dict[int, bytes] = {}
        self._events = ctx.add_listener()

    # --- primitive operations, all executed on the guest-loop thread ------

    def _machine(self) -> Machine:
        return self.ctx.machine

    def is_frozen(self) -> bool:
        return self.ctx.run_state is RunState.FROZEN

    def stop_code(self) -> bytes:
        if self.ctx.run_state is RunState.SHUTDOWN:
            return b"W00"
        reason = self.ctx.stop_reason or StopKind.PAUSE
        return STOP_CODES[reason]

    def freeze(self) -> None:
        self.ctx.post(lambda c: c.request_freeze())

    def resume(self) -> None:
        self.ctx.post(lambda c: c.resume())

    def reset(self) -> None:
        self.ctx.post(lambda c: c.reset_guest())

    def read_regs(self) -> list[int]:
        def fn(c):
            m = c.machine
            return ([m.reg(i) for i in range(8)]
                    + [m.pc, int(m.state[core.S_FLAGS])])
        return self.ctx.post(fn)

    def write_regs(self, values: list[int]) -> None:
        def fn(c):
            m = c.machine
            for i in range(8):
                m.set_reg(i, values[i])
            m.external_pc_write(values[8])
            m.state[core.S_FLAGS] = values[9] & 0xFFFFFFFF
        self.ctx.post(fn)

    def read_mem(self, addr: int, n: int):
        return self.ctx.post(lambda c: c.machine.debug_read(addr, n))

    def write_mem(self, addr: int, data: bytes) -> bool:
        return self.ctx.post(lambda c: c.machine.debug_write(addr, data))

    def pc(self) -> int:
        return self.ctx.post(lambda c: c.machine.pc)

    def _set_tf(self) -> None:
        def fn(c):
            c.machine.state[core.S_TF] = 1
        self.ctx.post(fn)

    def drain_events(self) -> None:
        while True:
            try:
                self._events.get_nowait()
            except queue.Empty:
                return

    def wait_stop(self, timeout: float = 30.0) -> dict:
        while True:
            ev = self._events.get(timeout=timeout)
            if ev.get("event") == "stopped":
                return ev

    # --- breakpoints --------------------------------------------------------

    def set_breakpoint(self, addr: int) -> str:
        """Returns 'ok', 'exists', or 'fail'."""
        if addr in self.breakpoints:
            return "exists"
        saved = self.read_mem(addr, 4)
        if saved is None:
            return "fail"
        if not self.write_mem(addr, BRK_WORD):
            return "fail"
        self.breakpoints[addr] = saved
        return "ok"

    def clear_breakpoint(self, addr: int) -> str:
        saved = self.breakpoints.pop(addr, None)
        if saved is None:
            return "ok"    # idempotent
        return "ok" if self.write_mem(addr, saved) else "fail"

    def clear_all_breakpoints(self) -> None:
        for addr in list(self.breakpoints):
            self.clear_breakpoint(addr)

    # --- run control ---------------------------------------------------------

    def step_once(self) -> dict:
        """One retired instruction: set tf, resume, catch the step stop."""
        if not self.is_frozen():
            raise StateError("guest not frozen")
        at = self.pc()
        re_arm = at in self.breakpoints
        if re_arm:
            self.write_mem(at, self.breakpoints[at])
        self.drain_events()
        self._set_tf()
        self.resume()
        ev = self.wait_stop()
        if re_arm:
            self.write_mem(at, BRK_WORD)
        return ev

    def continue_(self):
        """Resume; returns an immediate stop event if stepping over a
        breakpoint hit something, else None (stop arrives asynchronously)."""
        if not self.is_frozen():
            raise StateError("guest not frozen")
        if self.pc() in self.breakpoints:
            ev = self.step_once()
            if ev.get("reason") != StopKind.STEP.value:
                return ev
            if self.ctx.run_state is not RunState.FROZEN:
                return ev
        self.drain_events()
        self.resume()
        return None

    def detach(self) -> None:
        """Fail-open: restore guest memory and let the workload run."""
        self.clear_all_breakpoints()
        if self.is_frozen():
            self.resume()


def _parse_hex(tok: bytes) -> int:
    if not tok or any(c not in b"0123456789abcdefABCDEF" for c in tok):
        raise ValueError(tok)
    return int(tok, 16)


def _reg_hex(value: int) -> bytes:
    return (value & 0xFFFFFFFF).to_bytes(4, "little").hex().encode()


def handle_command(session: DebugSession, payload: bytes):
    """One request -> reply payload; None means deferred (c) or close (k)."""
    if not payload:
        return b""
    cmd, rest = payload[:1], payload[1:]

    if cmd == b"?":
        return session.stop_code()

    if cmd == b"g":
        return b"".join(_reg_hex(v) for v in session.read_regs())

    if cmd == b"G":
        if len(rest) != 8 * session.REGS:
            return b"E02"
        try:
            raw = bytes.fromhex(rest.decode("ascii"))
        except (ValueError, UnicodeDecodeError):
            return b"E02"
        values = [int.from_bytes(raw[i * 4:(i + 1) * 4], "little")
                  for i in range(session.REGS)]
        session.write_regs(values)
        return b"OK"

    if cmd == b"m":
        try:
            addr_s, len_s = rest.split(b",")
            addr, n = _parse_hex(addr_s), _parse_hex(len_s)
        except ValueError:
            return b"E02"
        data = session.read_mem(addr, n)
        if data is None:
            return b"E01"
        return data.hex().encode()

    if cmd == b"M":
        try:
            head, hexdata = rest.split(b":", 1)
            addr_s, len_s = head.split(b",")
            addr, n = _parse_hex(addr_s), _parse_hex(len_s)
            data = bytes.fromhex(hexdata.decode("ascii"))
        except (ValueError, UnicodeDecodeError):
            return b"E02"
        if len(data) != n:
            return b"E02"
        return b"OK" if session.write_mem(addr, data) else b"E01"

    if cmd in (b"Z", b"z"):
        try:
            kind_s, addr_s, len_s = rest.split(b",")
            if kind_s != b"0" or len_s != b"4":
                return b""     # only software breakpoints
            addr = _parse_hex(addr_s)
        except ValueError:
            return b"E02"
        if cmd == b"Z":
            return b"E01" if session.set_breakpoint(addr) == "fail" else b"OK"
        return b"E01" if session.clear_breakpoint(addr) == "fail" else b"OK"

    if cmd == b"s":
        try:
            session.step_once()
        except StateError:
            return b"E03"
        return session.stop_code()

    if cmd == b"c":
        try:
            ev = session.continue_()
        except StateError:
            return b"E03"
        if ev is not None:
            return session.stop_code()
        return None            # deferred until the next stop

    if cmd == b"k":
        session.detach()
        return None

    return b""                 # unknown command, per protocol convention


class RspServer:
    """TCP server, one client at a time; second connections are refused."""

    def __init__(self, session: DebugSession, host: str = "127.0.0.1",
                 port: int = 9000):
        self.session = session
        self.host = host
        self.port = port
        self.sock = socket.create_server((host, port))
        self.port = self.sock.getsockname()[1]
        self._thread: threading.Thread | None = None
        self._shutdown = threading.Event()
        self._busy = threading.Lock()

    def describe(self) -> str:
        return f"rsp tcp {self.host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._accept_loop,
                                        name="rsp-server", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._shutdown.set()
        try:
            self.sock.close()
        except OSError:
            pass

    def _accept_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._client_thread, args=(conn,),
                             name="rsp-client", daemon=True).start()

    def _client_thread(self, conn: socket.socket) -> None:
        if not self._busy.acquire(blocking=False):
            conn.close()       # one client at a time
            return
        try:
            self._serve_client(conn)
        except (OSError, StateError, queue.Empty):
            pass
        finally:
            try:
                self.session.detach()
            except Exception:
                pass
            conn.close()
            self._busy.release()

    def _serve_client(self, conn: socket.socket) -> None:
        conn.settimeout(0.05)
        parser = RspParser()
        last_reply = b""
        ctl = self.session.ctx
        if ctl.controller is None:
            ctl.controller = "rsp"
        self.session.drain_events()
        if not self.session.is_frozen() and ctl.run_state is not RunState.SHUTDOWN:
            self.session.freeze()
        conn.sendall(frame(self.session.stop_code()))
        pending_continue = False
        try:
            while not self._shutdown.is_set():
                if pending_continue:
                    try:
                        ev = self.session._events.get_nowait()
                        if ev.get("event") == "stopped":
                            pending_continue = False
                            last_reply = frame(self.session.stop_code())
                            conn.sendall(last_reply)
                    except queue.Empty:
                        pass
                try:
                    data = conn.recv(4096)
                except socket.timeout:
                    continue
                if not data:
                    return     # disconnect: fail-open via detach
                for ev in parser.feed(data):
                    kind = ev[0]
                    if kind == "ack":
                        continue
                    if kind == "nak":
                        conn.sendall(last_reply)
                        continue
                    if kind == "bad_checksum":
                        conn.sendall(b"-")
                        continue
                    if kind == "interrupt":
                        if not self.session.is_frozen():
                            self.session.drain_events()
                            self.session.freeze()
                            self.session.wait_stop()
                        pending_continue = False
                        last_reply = frame(self.session.stop_code())
                        conn.sendall(last_reply)
                        continue
                    payload = ev[1]
                    conn.sendall(b"+")
                    if payload[:1] == b"k":
                        self.session.detach()
                        return
                    reply = handle_command(self.session, payload)
                    if reply is None:
                        pending_continue = True
                        continue
                    last_reply = frame(reply)
                    conn.sendall(last_reply)
        finally:
            if ctl.controller == "rsp":
                ctl.controller = None
