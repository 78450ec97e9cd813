"""Drive the remote debug stub end to end: boot the transfer workload
under the lightweight monitor, attach over the wire protocol, plant a
breakpoint, and inspect the frozen guest.

Run:  python3 demos/debug_session.py
"""

import socket
import threading
import time

from minipc.bench import default_cost
from minipc.monitor import MonitorMode, RunState, guest_loop
from minipc.rsp import DebugSession, RspParser, RspServer, frame
from minipc.workload import XferParams, boot_xfer

params = XferParams(rate_mbps=200)
ctx = boot_xfer(MonitorMode.LIGHTWEIGHT, default_cost(), params)
session = DebugSession(ctx)
server = RspServer(session, port=0)
server.start()

loop = threading.Thread(target=guest_loop, args=(ctx,),
                        kwargs={"poll_cycles": 5000}, daemon=True)
loop.start()
while not ctx.loop_alive:
    time.sleep(0.01)

sock = socket.create_connection(("127.0.0.1", server.port))
sock.settimeout(10)
parser = RspParser()
packets = []


def recv():
    while not packets:
        for ev in parser.feed(sock.recv(4096)):
            if ev[0] == "packet":
                packets.append(ev[1])
    return packets.pop(0)


def cmd(payload):
    sock.sendall(frame(payload))
    return recv()


print("connected; first stop:", recv())            # S02: frozen on attach
print("registers:", cmd(b"g")[:32], "...")
print("code at entry:", cmd(b"m100,8"))

# Break on the checksum loop (first store in the segment loop body).
print("set breakpoint:", cmd(b"Z0,138,4"))
sock.sendall(frame(b"c"))
print("continue ... stop:", recv())                # S05 at the breakpoint
print("pc region now:", cmd(b"m138,4"))
print("single step:", cmd(b"s"))
print("clear breakpoint:", cmd(b"z0,138,4"))

# Fail-open detach: the workload runs to completion on its own.
sock.sendall(frame(b"k"))
sock.close()
for _ in range(200):
    if ctx.run_state is RunState.SHUTDOWN:
        break
    time.sleep(0.05)
print("workload finished:", ctx.run_state.value,
      "| datagrams sent:", len(ctx.machine.devices.nic.tx_log))
server.stop()
