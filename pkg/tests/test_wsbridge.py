import json
import urllib.error
import urllib.request

import pytest
from websockets.sync.client import connect

from minipc.rsp import DebugSession
from minipc.wsbridge import WsBridge

from test_rsp import LiveGuest


@pytest.fixture
def bridge():
    g = LiveGuest()
    session = DebugSession(g.ctx)
    b = WsBridge(session, port=0)
    b.start()
    yield g, b
    b.stop()
    g.stop()


def recv_event(ws, want, tries=50):
    for _ in range(tries):
        ev = json.loads(ws.recv(timeout=10))
        if ev.get("event") == want:
            return ev
    raise AssertionError(f"no {want!r} event")


def test_connect_sends_stopped_and_state(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        first = json.loads(ws.recv(timeout=10))
        assert first["event"] == "stopped"
        state = recv_event(ws, "state")
        assert set(state["regs"]) == {f"r{i}" for i in range(8)} | {"pc", "flags", "mode"}


def test_step_reports_stop_and_pc(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        ws.recv(timeout=10)
        ws.send(json.dumps({"cmd": "pause"}))
        recv_event(ws, "stopped")
        before = json.loads(urllib.request.urlopen(
            f"http://127.0.0.1:{b.port}/state", timeout=10).read())["regs"]["pc"]
        ws.send(json.dumps({"cmd": "step"}))
        ev = recv_event(ws, "stopped")
        assert ev["reason"] == "step"
        state = recv_event(ws, "state")
        assert state["regs"]["pc"] != before


def test_readmem_writemem_roundtrip(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        ws.recv(timeout=10)
        ws.send(json.dumps({"cmd": "pause"}))
        recv_event(ws, "stopped")
        ws.send(json.dumps({"cmd": "readmem", "addr": 256, "len": 4}))
        ev = recv_event(ws, "mem")
        assert ev == {"event": "mem", "addr": 256, "bytes": "00008008"}
        ws.send(json.dumps({"cmd": "writemem", "addr": 0x2000, "bytes": "aabbccdd"}))
        recv_event(ws, "mem")
        ws.send(json.dumps({"cmd": "readmem", "addr": 0x2000, "len": 4}))
        ev = recv_event(ws, "mem")
        assert ev["bytes"] == "aabbccdd"


def test_setbp_twice_reports_exists(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        ws.recv(timeout=10)
        ws.send(json.dumps({"cmd": "pause"}))
        recv_event(ws, "stopped")
        ws.send(json.dumps({"cmd": "setbp", "addr": 512}))
        recv_event(ws, "bp")
        ws.send(json.dumps({"cmd": "setbp", "addr": 512}))
        ev = recv_event(ws, "error")
        assert ev["message"] == "exists"


def test_disasm_lines(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        ws.recv(timeout=10)
        ws.send(json.dumps({"cmd": "pause"}))
        recv_event(ws, "stopped")
        ws.send(json.dumps({"cmd": "disasm", "addr": 0x100, "count": 2}))
        ev = recv_event(ws, "disasm")
        assert ev["lines"][0] == {"addr": 0x100, "text": "movi r1, 0"}
        assert len(ev["lines"]) == 2


def test_malformed_json_is_survivable(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws:
        ws.recv(timeout=10)
        ws.send("{nope")
        ev = recv_event(ws, "error")
        assert "malformed" in ev["message"]
        ws.send(json.dumps({"cmd": "readmem", "addr": 0, "len": 4}))
        recv_event(ws, "mem")    # session still alive


def test_http_state_endpoint(bridge):
    g, b = bridge
    body = json.loads(urllib.request.urlopen(
        f"http://127.0.0.1:{b.port}/state", timeout=10).read())
    assert body["event"] == "state"
    assert body["regs"]["mode"] in ("user", "supv")


def test_static_files_served(tmp_path):
    g = LiveGuest()
    session = DebugSession(g.ctx)
    (tmp_path / "index.html").write_text("<html>console</html>")
    (tmp_path / "app.js").write_text("// js")
    b = WsBridge(session, port=0, static_dir=tmp_path)
    b.start()
    try:
        root = urllib.request.urlopen(f"http://127.0.0.1:{b.port}/", timeout=10)
        assert b"console" in root.read()
        js = urllib.request.urlopen(f"http://127.0.0.1:{b.port}/app.js", timeout=10)
        assert js.headers["Content-Type"].startswith("text/javascript") or \
            js.headers["Content-Type"].startswith("application/javascript")
        with pytest.raises(urllib.error.HTTPError):
            urllib.request.urlopen(f"http://127.0.0.1:{b.port}/../etc/passwd",
                                   timeout=10)
    finally:
        b.stop()
        g.stop()


def test_second_controller_is_read_only(bridge):
    g, b = bridge
    with connect(f"ws://127.0.0.1:{b.port}/ws") as ws1:
        ws1.recv(timeout=10)
        with connect(f"ws://127.0.0.1:{b.port}/ws") as ws2:
            ws2.recv(timeout=10)
            ws2.send(json.dumps({"cmd": "pause"}))
            ev = recv_event(ws2, "error")
            assert "run-control" in ev["message"]
            ws2.send(json.dumps({"cmd": "readmem", "addr": 0x100, "len": 4}))
            recv_event(ws2, "mem")   # snapshots still allowed
