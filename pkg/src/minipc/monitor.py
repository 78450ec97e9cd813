"""The lightweight virtual machine monitor.

Classifies devices per mode, owns the exit-handling loop, emulates
virtualized device registers for the guest, protects its own memory
region, and freezes the guest for the debug stub on debug events and
protection violations.

Concurrency: the guest loop is single-owner.  Debug servers interact
exclusively through ``MonitorCtx.post()`` (command queue, executed at
exit boundaries or while frozen) and listener event queues.
"""

from __future__ import annotations

import enum
import json
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from . import core
from .devices import DISK_BASES, NIC_BASE, PIC_PORTS, SECTOR, TIMER_PORTS, UART_PORTS
from .image import Image
from .machine import (
    CostModel, CycleBudgetExhausted, DebugBreak, DebugStep, DoubleFault,
    GSTATE_GUEST, GSTATE_HOST, HaltInstr, IrqIntercept, Machine,
    MonitorFrameFault, TrappedIn, TrappedOut,
)

MONITOR_RESERVED = 1 << 20           # top 1 MiB in VMM modes
SENTINEL_PERIOD = 251                # monitor fill pattern: (i * 37 + 11) % 251


class MonitorMode(enum.Enum):
    BARE = "bare"
    LIGHTWEIGHT = "lightweight"
    FULLVIRT = "fullvirt"


class DeviceClass(enum.Enum):
    VIRTUALIZED = "virtualized"
    PASSTHROUGH = "passthrough"


DEVICE_PORTS = {
    "uart0": set(UART_PORTS),
    "timer": set(TIMER_PORTS),
    "pic": set(PIC_PORTS),
    "disk0": set(range(DISK_BASES[0], DISK_BASES[0] + 5)),
    "disk1": set(range(DISK_BASES[1], DISK_BASES[1] + 5)),
    "disk2": set(range(DISK_BASES[2], DISK_BASES[2] + 5)),
    "nic": set(range(NIC_BASE, NIC_BASE + 4)),
}

_DEBUG_CRITICAL = ("uart0", "timer", "pic")
_HIGH_THROUGHPUT = ("disk0", "disk1", "disk2", "nic")


def device_classes(mode: MonitorMode) -> dict[str, DeviceClass]:
    if mode is MonitorMode.BARE:
        return {d: DeviceClass.PASSTHROUGH for d in DEVICE_PORTS}
    classes = {d: DeviceClass.VIRTUALIZED for d in _DEBUG_CRITICAL}
    for d in _HIGH_THROUGHPUT:
        classes[d] = (DeviceClass.VIRTUALIZED if mode is MonitorMode.FULLVIRT
                      else DeviceClass.PASSTHROUGH)
    return classes


class RunState(enum.Enum):
    RUNNING = "running"
    FROZEN = "frozen"
    SHUTDOWN = "shutdown"


class StopKind(enum.Enum):
    BREAKPOINT = "breakpoint"
    STEP = "step"
    PROTECTION_FAULT = "protection-fault"
    DOUBLE_FAULT = "double-fault"
    PAUSE = "pause"


class Disposition(enum.Enum):
    RESUME = "resume"
    FROZEN = "frozen"
    SHUTDOWN = "shutdown"


class StateError(Exception):
    pass


@dataclass
class ExitStats:
    trapped_in: int = 0
    trapped_out: int = 0
    irq_intercepts: int = 0
    monitor_faults: int = 0
    debug_breaks: int = 0
    debug_steps: int = 0
    double_faults: int = 0
    halts: int = 0
    budget_exhausted: int = 0
    world_switches: int = 0
    trapped_ports: dict = field(default_factory=dict)

    @property
    def trapped_io(self) -> int:
        return self.trapped_in + self.trapped_out

    def count_port(self, port: int) -> None:
        self.trapped_ports[port] = self.trapped_ports.get(port, 0) + 1


class VirtUart:
    """Guest-facing emulated UART; tx lands in a console sink, never on
    the physical UART (which is reserved as the monitor's debug link)."""

    def __init__(self, ctx: "MonitorCtx"):
        self.ctx = ctx
        self.sink = bytearray()
        self.rx = bytearray()

    def read_reg(self, reg: int) -> int:
        if reg == 1:
            if self.rx:
                b = self.rx[0]
                del self.rx[0]
                return b
            return 0
        if reg == 2:
            return (1 if self.rx else 0) | 2
        return 0

    def write_reg(self, reg: int, value: int) -> None:
        if reg == 0:
            self.sink.append(value & 0xFF)
            self.ctx.emit({"event": "serial",
                           "data": bytes([value & 0xFF]).decode("latin-1")})


class MonitorCtx:
    def __init__(self, machine: Machine, mode: MonitorMode, cost: CostModel):
        self.machine = machine
        self.mode = mode
        self.cost = cost
        self.classes = device_classes(mode)
        self.stats = ExitStats()
        self.run_state = RunState.RUNNING
        self.stop_reason: StopKind | None = None
        self.vuart = VirtUart(self)
        self.image: Image | None = None
        self.commands: queue.Queue = queue.Queue()
        self._listeners: list[queue.Queue] = []
        self._listeners_lock = threading.Lock()
        self.controller: str | None = None   # exclusive run-control owner
        self.loop_alive = False

    # --- event/command plumbing (thread-safe edges) -----------------------

    def add_listener(self) -> queue.Queue:
        q = queue.Queue()
        with self._listeners_lock:
            self._listeners.append(q)
        return q

    def remove_listener(self, q: queue.Queue) -> None:
        with self._listeners_lock:
            if q in self._listeners:
                self._listeners.remove(q)

    def emit(self, event: dict) -> None:
        with self._listeners_lock:
            for q in self._listeners:
                q.put(event)

    def post(self, fn, wait: bool = True):
        """Run fn(ctx) inside the guest loop at the next safe point."""
        if not self.loop_alive:
            raise StateError("guest loop is not running")
        done = queue.Queue()
        self.commands.put((fn, done))
        if wait:
            ok, result = done.get(timeout=60)
            if not ok:
                raise result
            return result
        return None

    def _drain_commands(self, block: bool) -> None:
        while True:
            try:
                fn, done = self.commands.get(block=block, timeout=0.05 if block else None)
            except queue.Empty:
                return
            try:
                done.put((True, fn(self)))
            except Exception as e:          # surfaced to the posting thread
                done.put((False, e))
            block = False

    # --- run control -------------------------------------------------------

    def freeze(self, reason: StopKind) -> None:
        self.run_state = RunState.FROZEN
        self.stop_reason = reason
        self.emit({"event": "stopped", "reason": reason.value,
                   "pc": self.machine.pc})

    def resume(self) -> None:
        if self.run_state is not RunState.FROZEN:
            raise StateError("resume on a non-frozen guest")
        self.run_state = RunState.RUNNING

    def request_freeze(self) -> None:
        if self.run_state is RunState.RUNNING:
            self.freeze(StopKind.PAUSE)

    def reset_guest(self) -> None:
        """Reload the original image; monitor state and frames are kept."""
        if self.image is None:
            raise StateError("no image loaded")
        self.machine.reset_guest_state(self.image)
        if self.mode is not MonitorMode.BARE:
            self.machine.state[core.S_GSTATE] = GSTATE_GUEST

    def load_guest(self, image: Image) -> None:
        self.image = image
        self.machine.load_image(image)

    # --- monitor-side emulation helpers ------------------------------------

    def monitor_region_bytes(self) -> bytes:
        m = self.machine
        return m.read_phys(m.mem_size - MONITOR_RESERVED, MONITOR_RESERVED)

    def _virt_read(self, port: int) -> int:
        if port in DEVICE_PORTS["uart0"]:
            return self.vuart.read_reg(port)
        return self.machine.port_read(port)

    def _virt_write(self, port: int, value: int) -> None:
        if port in DEVICE_PORTS["uart0"]:
            self.vuart.write_reg(port, value)
            return
        self.machine.port_write(port, value)


def init_monitor(machine: Machine, mode: MonitorMode, cost: CostModel) -> MonitorCtx:
    """Configure trapping, interception and the monitor memory region."""
    ctx = MonitorCtx(machine, mode, cost)
    s = machine.state
    if mode is MonitorMode.BARE:
        machine.trap_ports = set()
        machine.intercept_irqs = False
        s[core.S_INTERCEPT_DEBUG] = 0
        s[core.S_GSTATE] = GSTATE_HOST
        return ctx
    base = machine.mem_size - MONITOR_RESERVED
    machine.ownership[base // 4096:] = 1
    fill = np.arange(MONITOR_RESERVED, dtype=np.int64)
    machine.mem[base:] = ((fill * 37 + 11) % SENTINEL_PERIOD).astype(np.uint8)
    trap = set()
    for dev, cls in ctx.classes.items():
        if cls is DeviceClass.VIRTUALIZED:
            trap |= DEVICE_PORTS[dev]
    machine.trap_ports = trap
    machine.intercept_irqs = True
    s[core.S_INTERCEPT_DEBUG] = 1
    s[core.S_GSTATE] = GSTATE_GUEST
    return ctx


def handle_exit(ctx: MonitorCtx, exit_reason) -> Disposition:
    """Charge the world switch and service one exit."""
    m = ctx.machine
    stats = ctx.stats
    if ctx.mode is MonitorMode.BARE and not isinstance(
            exit_reason, (HaltInstr, DoubleFault)):
        raise StateError(f"exit {exit_reason!r} impossible in BARE mode")
    if ctx.mode is not MonitorMode.BARE:
        # On bare metal nothing is interposed: the halt exit is just the
        # host loop noticing, not a guest->monitor world switch.
        stats.world_switches += 1
        m.charge_monitor(ctx.cost.world_switch)

    if isinstance(exit_reason, TrappedIn):
        stats.trapped_in += 1
        stats.count_port(exit_reason.port)
        m.charge_monitor(ctx.cost.emulate_port)
        value = ctx._virt_read(exit_reason.port)
        m.complete_trapped_in(value)
        return Disposition.RESUME

    if isinstance(exit_reason, TrappedOut):
        stats.trapped_out += 1
        stats.count_port(exit_reason.port)
        m.charge_monitor(ctx.cost.emulate_port)
        port, value = exit_reason.port, exit_reason.value
        if ctx.mode is MonitorMode.FULLVIRT:
            for idx, base in enumerate(DISK_BASES):
                if port == base + 3 and value == 1:
                    # The monitor itself performs the DMA copy for the
                    # emulated disk and pays for it per byte.
                    disk = m.devices.disks[idx]
                    nbytes = disk.count * SECTOR
                    m.charge_monitor(ctx.cost.dma_copy_per_byte * nbytes)
                    end = (disk.lba + disk.count) * SECTOR
                    if 0 < nbytes and end <= len(disk.backing):
                        disk.perform_dma()
                    break
        ctx._virt_write(port, value)
        m.complete_trapped_out()
        return Disposition.RESUME

    if isinstance(exit_reason, IrqIntercept):
        stats.irq_intercepts += 1
        fault = m.inject_irq(exit_reason.vector)
        if fault is not None:
            ctx.freeze(StopKind.DOUBLE_FAULT)
            return Disposition.FROZEN
        return Disposition.RESUME

    if isinstance(exit_reason, DebugBreak):
        stats.debug_breaks += 1
        ctx.freeze(StopKind.BREAKPOINT)
        return Disposition.FROZEN

    if isinstance(exit_reason, DebugStep):
        stats.debug_steps += 1
        ctx.freeze(StopKind.STEP)
        return Disposition.FROZEN

    if isinstance(exit_reason, MonitorFrameFault):
        stats.monitor_faults += 1
        ctx.freeze(StopKind.PROTECTION_FAULT)
        return Disposition.FROZEN

    if isinstance(exit_reason, DoubleFault):
        stats.double_faults += 1
        ctx.freeze(StopKind.DOUBLE_FAULT)
        return Disposition.FROZEN

    if isinstance(exit_reason, HaltInstr):
        stats.halts += 1
        return Disposition.SHUTDOWN

    raise StateError(f"exit {exit_reason!r} impossible under {ctx.mode}")


def guest_loop(ctx: MonitorCtx, max_cycles: int | None = None,
               poll_cycles: int | None = 10_000, until=None) -> ExitStats:
    """Alternate run() and handle_exit() until shutdown, the cycle budget,
    or an `until(disposition)` predicate.

    Debugger commands are drained at every exit boundary; poll_cycles
    bounds the latency by slicing long runs (None = slice only at device
    events and budget).  A frozen guest parks here waiting for commands,
    unless the caller bounded the run with max_cycles (frozen time
    consumes no cycles, so returning is the only way to honor the bound).
    """
    m = ctx.machine
    start = m.cycles_total
    ctx.loop_alive = True
    try:
        while ctx.run_state is not RunState.SHUTDOWN:
            ctx._drain_commands(block=(ctx.run_state is RunState.FROZEN))
            if ctx.run_state is RunState.SHUTDOWN:
                break
            if ctx.run_state is RunState.FROZEN:
                if max_cycles is not None and ctx.commands.empty():
                    break
                continue
            if m.halted:
                ctx.run_state = RunState.SHUTDOWN
                break
            remaining = None if max_cycles is None else start + max_cycles - m.cycles_total
            if remaining is not None and remaining <= 0:
                break
            budget = remaining if remaining is not None else (1 << 40)
            if poll_cycles is not None:
                budget = min(budget, poll_cycles)
            exit_reason = m.run(int(budget))
            if isinstance(exit_reason, CycleBudgetExhausted):
                ctx.stats.budget_exhausted += 1
                continue
            disp = handle_exit(ctx, exit_reason)
            if disp is Disposition.SHUTDOWN:
                ctx.run_state = RunState.SHUTDOWN
                ctx.emit({"event": "stopped", "reason": "shutdown", "pc": m.pc})
            if until is not None and until(disp):
                break
    finally:
        ctx.loop_alive = False
        while True:   # fail anything still queued so posters unblock
            try:
                _, done = ctx.commands.get_nowait()
            except queue.Empty:
                break
            done.put((False, StateError("guest loop stopped")))
    return ctx.stats


# --- config file ------------------------------------------------------------

def cost_from_dict(d: dict) -> CostModel:
    return CostModel(
        cycles_per_instr=d.get("cycles_per_instr", 1),
        world_switch=d.get("world_switch", 0),
        emulate_port=d.get("emulate_port", 0),
        dma_copy_per_byte=d.get("dma_copy_per_byte", 0),
        clock_hz=d.get("clock_hz", 100_000_000),
        disk_cycles_per_byte=d.get("disk_cycles_per_byte", 0),
        nic_cycles_per_byte=d.get("nic_cycles_per_byte", 0),
    )


def load_config(path) -> tuple[MonitorMode, CostModel, int]:
    """Parse {"mode":..., "cost": {...}, "mem_mib": N}."""
    with open(path) as f:
        d = json.load(f)
    mode = MonitorMode(d.get("mode", "lightweight"))
    cost = cost_from_dict(d.get("cost", {}))
    return mode, cost, int(d.get("mem_mib", 16))


def boot_monitored(image: Image, mode: MonitorMode, cost: CostModel,
                   mem_mib: int = 16) -> MonitorCtx:
    """Fresh machine + monitor + loaded guest, ready for guest_loop()."""
    machine = Machine(mem_mib=mem_mib, cost=cost)
    ctx = init_monitor(machine, mode, cost)
    ctx.load_guest(image)
    return ctx
