"""MiniPC-32 machine: CPU state, memory, MMU, devices, cycle accounting.

The Machine owns the flat arrays the interpreter core runs on and
orchestrates everything the core defers: device ticking, IRQ delivery,
port dispatch, DMA, and the exit vocabulary handed to the monitor.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import core, isa
from .devices import DeviceSet, LINE_TIMER
from .image import Image, LoadError

PAGE = 4096

MODE_USER = 0
MODE_SUPV = 1
GSTATE_HOST = 0
GSTATE_GUEST = 1


@dataclass
class CostModel:
    cycles_per_instr: int = 1
    world_switch: int = 0
    emulate_port: int = 0
    dma_copy_per_byte: int = 0
    clock_hz: int = 100_000_000
    disk_cycles_per_byte: int = 0
    nic_cycles_per_byte: int = 0

    def __post_init__(self):
        for name in ("cycles_per_instr", "world_switch", "emulate_port",
                     "dma_copy_per_byte", "disk_cycles_per_byte",
                     "nic_cycles_per_byte"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be > 0")


# --- exit vocabulary ------------------------------------------------------

@dataclass(frozen=True)
class TrappedIn:
    port: int


@dataclass(frozen=True)
class TrappedOut:
    port: int
    value: int


@dataclass(frozen=True)
class MonitorFrameFault:
    paddr: int
    access: int          # core.ACC_READ / ACC_WRITE / ACC_FETCH
    guest_pc: int


@dataclass(frozen=True)
class DebugBreak:
    pc: int


@dataclass(frozen=True)
class DebugStep:
    pc: int


@dataclass(frozen=True)
class IrqIntercept:
    vector: int


@dataclass(frozen=True)
class DoubleFault:
    pc: int


@dataclass(frozen=True)
class HaltInstr:
    pc: int = 0


@dataclass(frozen=True)
class CycleBudgetExhausted:
    pass


ExitReason = (TrappedIn | TrappedOut | MonitorFrameFault | DebugBreak
              | DebugStep | IrqIntercept | DoubleFault | HaltInstr
              | CycleBudgetExhausted)


# --- step results ---------------------------------------------------------

@dataclass(frozen=True)
class Retired:
    pass


@dataclass(frozen=True)
class GuestTrapDelivered:
    vector: int


@dataclass(frozen=True)
class Exit:
    reason: ExitReason


class MachineError(Exception):
    pass


class Machine:
    def __init__(self, mem_mib: int = 16, cost: CostModel | None = None):
        self.cost = cost or CostModel()
        self.mem_size = mem_mib * 1024 * 1024
        self.mem = np.zeros(self.mem_size, dtype=np.uint8)
        self.ownership = np.zeros(self.mem_size // PAGE, dtype=np.uint8)
        self.state = np.zeros(core.NSLOTS, dtype=np.int64)
        self.trace = np.zeros(1, dtype=np.uint64)
        self.devices = DeviceSet(self)
        self.trap_ports: set[int] = set()
        self.intercept_irqs = False
        self._last_ticked = 0
        self._shadow_suppressed = False
        s = self.state
        s[core.S_MODE] = MODE_SUPV
        s[core.S_CPI] = self.cost.cycles_per_instr
        s[core.S_MEMSIZE] = self.mem_size
        s[core.S_LAST_VECTOR] = -1

    # --- convenience accessors -------------------------------------------

    @property
    def pc(self) -> int:
        return int(self.state[core.S_PC])

    @pc.setter
    def pc(self, v: int) -> None:
        self.state[core.S_PC] = v & 0xFFFFFFFF

    @property
    def cycles_total(self) -> int:
        return int(self.state[core.S_CYC_TOTAL])

    @property
    def cycles_idle(self) -> int:
        return int(self.state[core.S_CYC_IDLE])

    @property
    def cycles_monitor(self) -> int:
        return int(self.state[core.S_CYC_MON])

    @property
    def retired(self) -> int:
        return int(self.state[core.S_RETIRED])

    @property
    def halted(self) -> bool:
        return bool(self.state[core.S_HALTED])

    def reg(self, i: int) -> int:
        return int(self.state[i])

    def set_reg(self, i: int, v: int) -> None:
        self.state[i] = v & 0xFFFFFFFF

    def regs_snapshot(self) -> dict:
        s = self.state
        d = {f"r{i}": int(s[i]) for i in range(8)}
        d["pc"] = int(s[core.S_PC])
        d["flags"] = int(s[core.S_FLAGS])
        d["mode"] = "supv" if s[core.S_MODE] == MODE_SUPV else "user"
        return d

    def set_trace(self, enabled: bool) -> None:
        self.state[core.S_TRACE_EN] = 1 if enabled else 0
        self.trace[0] = np.uint64(0xCBF29CE484222325)  # FNV offset basis

    def trace_digest(self) -> int:
        return int(self.trace[0])

    # --- physical memory helpers -----------------------------------------

    def read_phys(self, addr: int, n: int) -> bytes:
        if addr < 0 or addr + n > self.mem_size:
            raise MachineError(f"physical read out of range: {addr:#x}+{n}")
        return self.mem[addr:addr + n].tobytes()

    def write_phys(self, addr: int, data: bytes) -> None:
        if addr < 0 or addr + len(data) > self.mem_size:
            raise MachineError(f"physical write out of range: {addr:#x}")
        self.mem[addr:addr + len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)
        self._fold_mem_write(addr, data)

    def _fold_mem_write(self, addr: int, data) -> None:
        if self.state[core.S_TRACE_EN]:
            h = int(self.trace[0])
            for x in (0xD0A, addr, len(data), zlib.crc32(bytes(data))):
                h = ((h ^ (x & 0xFFFFFFFFFFFFFFFF)) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
            self.trace[0] = np.uint64(h)

    # --- DMA (device-initiated, ownership-checked) ------------------------

    def _dma_span_ok(self, addr: int, n: int) -> bool:
        if addr < 0 or n < 0 or addr + n > self.mem_size:
            return False
        f0, f1 = addr // PAGE, (addr + n - 1) // PAGE
        return not bool(self.ownership[f0:f1 + 1].any())

    def dma_write(self, addr: int, data: np.ndarray) -> bool:
        n = len(data)
        if not self._dma_span_ok(addr, n):
            return False
        self.mem[addr:addr + n] = data
        self._fold_mem_write(addr, data.tobytes())
        return True

    def dma_read(self, addr: int, n: int):
        if not self._dma_span_ok(addr, n):
            return None
        return self.mem[addr:addr + n].copy()

    # --- MMU query path (debugger etc.) -----------------------------------

    def translate(self, vaddr: int, access: int, mode: int | None = None,
                  gstate: int | None = None):
        """Pure translation query; returns (status, paddr) like the core."""
        s = self.state
        return core.translate(
            self.mem, self.ownership, int(s[core.S_PTBR]),
            int(s[core.S_MODE]) if mode is None else mode,
            int(s[core.S_GSTATE]) if gstate is None else gstate,
            self.mem_size, vaddr & 0xFFFFFFFF, access,
        )

    def debug_read(self, vaddr: int, n: int):
        """Read guest memory via virtual addressing with SUPV rights.

        Still subject to the monitor-frame check; returns None on any
        unmapped page or ownership violation.
        """
        out = bytearray()
        addr = vaddr
        remaining = n
        while remaining > 0:
            word_base = addr & ~3
            st, paddr = self.translate(word_base, core.ACC_READ, mode=MODE_SUPV)
            if st != core.T_OK:
                return None
            take = min(4 - (addr & 3), remaining)
            out += self.mem[paddr + (addr & 3):paddr + (addr & 3) + take].tobytes()
            addr += take
            remaining -= take
        return bytes(out)

    def debug_write(self, vaddr: int, data: bytes) -> bool:
        addr = vaddr
        off = 0
        while off < len(data):
            word_base = addr & ~3
            st, paddr = self.translate(word_base, core.ACC_WRITE, mode=MODE_SUPV)
            if st != core.T_OK:
                return False
            take = min(4 - (addr & 3), len(data) - off)
            chunk = data[off:off + take]
            self.mem[paddr + (addr & 3):paddr + (addr & 3) + take] = \
                np.frombuffer(chunk, dtype=np.uint8)
            self._fold_mem_write(paddr + (addr & 3), chunk)
            addr += take
            off += take
        return True

    # --- image loading -----------------------------------------------------

    def load_image(self, image: Image) -> None:
        image.validate()
        for addr, data in image.sections:
            if addr < 0 or addr + len(data) > self.mem_size:
                raise LoadError(f"section at {addr:#x} exceeds physical memory")
            if len(data) and not self._dma_span_ok(addr, len(data)):
                raise LoadError(f"section at {addr:#x} overlaps a monitor frame")
        for addr, data in image.sections:
            if data:
                self.mem[addr:addr + len(data)] = np.frombuffer(data, dtype=np.uint8)
                self._fold_mem_write(addr, data)
        s = self.state
        s[core.S_PC] = image.entry & 0xFFFFFFFF
        s[core.S_MODE] = MODE_SUPV
        s[core.S_PTBR] = 0

    # --- direct (pass-through) port access --------------------------------

    def port_read(self, port: int) -> int:
        return self.devices.read(port, self.cycles_total)

    def port_write(self, port: int, value: int) -> None:
        self.devices.write(port, value, self.cycles_total)

    # --- monitor-side charge and completion hooks --------------------------

    def charge_monitor(self, cycles: int) -> None:
        self.state[core.S_CYC_MON] += cycles
        self.state[core.S_CYC_TOTAL] += cycles

    def _retire_fold(self) -> None:
        if self.state[core.S_TRACE_EN]:
            s = self.state
            h = int(self.trace[0])
            vals = [int(s[core.S_PC])] + [int(s[i]) for i in range(8)]
            vals.append(int(s[core.S_FLAGS]) | (int(s[core.S_MODE]) << 8))
            for x in vals:
                h = ((h ^ (x & 0xFFFFFFFFFFFFFFFF)) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
            self.trace[0] = np.uint64(h)

    def _complete_port_instr(self) -> None:
        s = self.state
        s[core.S_PC] = (s[core.S_PC] + 4) & 0xFFFFFFFF
        s[core.S_RETIRED] += 1
        s[core.S_CYC_TOTAL] += s[core.S_CPI]
        s[core.S_STI_SHADOW] = 0
        self._retire_fold()

    def complete_trapped_in(self, value: int) -> None:
        """Architecturally complete a trapped IN with the emulated value."""
        rd = int(self.state[core.S_EXIT_B])
        self.set_reg(rd, value)
        self._complete_port_instr()

    def complete_trapped_out(self) -> None:
        self._complete_port_instr()

    def inject_irq(self, vector: int):
        """Deliver an intercepted IRQ into the guest (monitor path)."""
        line = vector - 8
        self.devices.pic.begin_service(line)
        self._wake_if_parked()
        r = core.deliver_trap(self.state, self.mem, self.ownership, vector,
                              self.pc, 0, False)
        self.state[core.S_STI_SHADOW] = 0
        if r != 0:
            return DoubleFault(self.pc)
        return None

    def _wake_if_parked(self) -> None:
        # An IDLE completes (retires as a NOP) when an IRQ is delivered.
        s = self.state
        if s[core.S_IDLE_PARKED]:
            s[core.S_IDLE_PARKED] = 0
            s[core.S_PC] = (s[core.S_PC] + 4) & 0xFFFFFFFF
            s[core.S_RETIRED] += 1
            s[core.S_CYC_TOTAL] += s[core.S_CPI]
            self._retire_fold()

    # --- IRQ boundary logic -------------------------------------------------

    def _deliverable_vector(self):
        s = self.state
        if not s[core.S_FLAGS] & isa.FLAG_I:
            return None
        line = self.devices.pic.deliverable_line()
        if line is None:
            return None
        return 8 + line

    def _boundary(self):
        """Tick devices to now and deliver at most one IRQ.

        Returns an ExitReason (IrqIntercept/DoubleFault) or None.
        """
        now = self.cycles_total
        if now > self._last_ticked:
            self.devices.tick(now)
            self._last_ticked = now
        s = self.state
        self._shadow_suppressed = False
        vector = self._deliverable_vector()
        if vector is None:
            return None
        if s[core.S_STI_SHADOW] and not s[core.S_IDLE_PARKED]:
            # STI's one-instruction delivery shadow: run exactly one more
            # instruction, then deliver at the next boundary.
            self._shadow_suppressed = True
            return None
        if self.intercept_irqs:
            self._wake_if_parked()
            return IrqIntercept(vector)
        self.devices.pic.begin_service(vector - 8)
        self._wake_if_parked()
        r = core.deliver_trap(self.state, self.mem, self.ownership, vector,
                              self.pc, 0, False)
        s[core.S_STI_SHADOW] = 0
        if r != 0:
            return DoubleFault(self.pc)
        return None

    def _next_stop(self, budget_end: int) -> int:
        ev = self.devices.next_event()
        stop = budget_end
        if ev is not None and ev < stop:
            stop = max(ev, self.cycles_total + 1)
        if self._shadow_suppressed:
            stop = min(stop, self.cycles_total + max(1, int(self.state[core.S_CPI])))
        return stop

    # --- execution -----------------------------------------------------------

    def _dispatch(self, code: int):
        s = self.state
        if code == core.EXIT_STOP:
            return None
        if code == core.EXIT_PORT_IN:
            port = int(s[core.S_EXIT_A])
            if s[core.S_GSTATE] == GSTATE_GUEST and port in self.trap_ports:
                return TrappedIn(port)
            self.complete_trapped_in(self.port_read(port))
            return None
        if code == core.EXIT_PORT_OUT:
            port = int(s[core.S_EXIT_A])
            value = int(s[core.S_EXIT_B])
            if s[core.S_GSTATE] == GSTATE_GUEST and port in self.trap_ports:
                return TrappedOut(port, value)
            self.port_write(port, value)
            self.complete_trapped_out()
            return None
        if code == core.EXIT_MONFAULT:
            return MonitorFrameFault(int(s[core.S_EXIT_A]), int(s[core.S_EXIT_B]),
                                     int(s[core.S_EXIT_C]))
        if code == core.EXIT_BREAK:
            return DebugBreak(int(s[core.S_EXIT_A]))
        if code == core.EXIT_STEP:
            return DebugStep(int(s[core.S_EXIT_A]))
        if code == core.EXIT_HALT:
            return HaltInstr(int(s[core.S_EXIT_A]))
        if code == core.EXIT_DFAULT:
            return DoubleFault(int(s[core.S_EXIT_A]))
        if code == core.EXIT_RESCHED:
            return None
        raise MachineError(f"unknown core exit {code}")

    def run(self, cycle_budget: int) -> ExitReason:
        """Run until the first monitor-visible exit or budget exhaustion."""
        if cycle_budget <= 0:
            raise ValueError("cycle_budget must be > 0")
        if self.halted:
            raise MachineError("machine is halted")
        s = self.state
        budget_end = self.cycles_total + cycle_budget
        result = None
        while True:
            exit_reason = self._boundary()
            if exit_reason is not None:
                result = exit_reason
                break
            if self.cycles_total >= budget_end:
                result = CycleBudgetExhausted()
                break
            s[core.S_STOP_CYCLE] = self._next_stop(budget_end)
            code = core.core_run(self.state, self.mem, self.ownership, self.trace)
            exit_reason = self._dispatch(code)
            if exit_reason is not None:
                result = exit_reason
                break
        self._assert_conservation()
        return result

    def step(self):
        """Execute one instruction; no device ticking or IRQ delivery."""
        if self.halted:
            raise MachineError("machine is halted")
        s = self.state
        s[core.S_LAST_VECTOR] = -1
        s[core.S_RETIRE_STOP] = s[core.S_RETIRED] + 1
        s[core.S_STOP_CYCLE] = s[core.S_CYC_TOTAL] + max(1, int(s[core.S_CPI]))
        code = core.core_run(self.state, self.mem, self.ownership, self.trace)
        s[core.S_RETIRE_STOP] = 0
        exit_reason = self._dispatch(code)
        if exit_reason is not None:
            return Exit(exit_reason)
        if s[core.S_LAST_VECTOR] >= 0:
            return GuestTrapDelivered(int(s[core.S_LAST_VECTOR]))
        return Retired()

    def _assert_conservation(self) -> None:
        s = self.state
        lhs = int(s[core.S_CYC_TOTAL])
        rhs = (int(s[core.S_RETIRED]) * int(s[core.S_CPI])
               + int(s[core.S_CYC_MON]) + int(s[core.S_CYC_IDLE]))
        if lhs != rhs:
            raise MachineError(
                f"cycle conservation violated: total={lhs} retired*cpi+mon+idle={rhs}")

    def external_pc_write(self, value: int) -> None:
        """Debugger/monitor pc write: also invalidates any idle parking."""
        self.state[core.S_PC] = value & 0xFFFFFFFF
        self.state[core.S_IDLE_PARKED] = 0

    def reset_guest_state(self, image: Image) -> None:
        """Reload the image and re-arm the guest; counters keep running.

        Monitor-owned structures (ownership map, trap ports, intercept
        flags) are untouched.
        """
        s = self.state
        for i in range(8):
            s[i] = 0
        for slot in (core.S_FLAGS, core.S_PTBR, core.S_IVT, core.S_TF,
                     core.S_EPC, core.S_EFLAGS, core.S_EMODE, core.S_INFAULT,
                     core.S_HALTED, core.S_IDLE_PARKED, core.S_STI_SHADOW):
            s[slot] = 0
        s[core.S_LAST_VECTOR] = -1
        self.devices.reset()
        self.load_image(image)
