"""Port-mapped device models for the MiniPC-32 machine.

Devices are pure Python and deterministic: every asynchronous effect is
scheduled at an absolute cycle count and applied when the machine ticks
past it.  IRQ routing goes through the PIC; line n maps to vector 8+n.

Port map (16-bit ports):
    UART0   0x00 tx, 0x01 rx, 0x02 status {bit0 rx-ready, bit1 tx-ready}
    TIMER   0x10 interval, 0x11 control (bit0 enable), 0x12 expiry count
    PIC     0x20 mask, 0x21 ack (write line number to complete service)
    DISK0   0x40..0x44  (+0 LBA, +1 count, +2 DMA addr, +3 command, +4 status)
    DISK1   0x50..0x54
    DISK2   0x60..0x64
    NIC     0x80..0x83  (+0 tx addr, +1 tx len, +2 command, +3 status)

Status bits for disk and NIC: bit0 busy, bit1 done, bit2 error.
"""

from __future__ import annotations

import logging
from collections import deque
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

LINE_TIMER = 0
LINE_DISK = 1
LINE_NIC = 2
LINE_UART = 3

ST_BUSY = 1
ST_DONE = 2
ST_ERROR = 4

SECTOR = 512

UART_PORTS = (0x00, 0x01, 0x02)
TIMER_PORTS = (0x10, 0x11, 0x12)
PIC_PORTS = (0x20, 0x21)
DISK_BASES = (0x40, 0x50, 0x60)
NIC_BASE = 0x80

PATTERN_MULT = 2654435761


def pattern_bytes(disk_id: int, offset: int, length: int) -> np.ndarray:
    """Deterministic disk backing pattern: byte i = ((i + id) * K) >> 24."""
    idx = np.arange(offset, offset + length, dtype=np.uint64) + np.uint64(disk_id)
    vals = (idx * np.uint64(PATTERN_MULT)) & np.uint64(0xFFFFFFFF)
    return (vals >> np.uint64(24)).astype(np.uint8)


class Pic:
    """8259-flavoured controller: pending + in-service bits per line."""

    def __init__(self):
        self.mask = 0xFF
        self.pending = 0
        self.in_service = 0

    def raise_line(self, line: int) -> None:
        self.pending |= 1 << line

    def deliverable_line(self) -> Optional[int]:
        ready = self.pending & ~self.mask & ~self.in_service & 0xFF
        if ready == 0:
            return None
        return (ready & -ready).bit_length() - 1  # lowest line = highest priority

    def begin_service(self, line: int) -> None:
        bit = 1 << line
        self.pending &= ~bit
        self.in_service |= bit

    def ack(self, line: int) -> None:
        self.in_service &= ~(1 << line & 0xFF)

    def reset(self) -> None:
        self.mask, self.pending, self.in_service = 0xFF, 0, 0


class Uart:
    """Byte channel: tx to a host-side buffer, rx from a host-fed queue."""

    def __init__(self, pic: Pic):
        self.pic = pic
        self.host_tx = bytearray()
        self.rx = deque()
        self.tx_listener = None

    def feed_rx(self, data: bytes) -> None:
        self.rx.extend(data)
        if self.rx:
            self.pic.raise_line(LINE_UART)

    def read_reg(self, reg: int, now: int) -> int:
        if reg == 1:
            return self.rx.popleft() if self.rx else 0
        if reg == 2:
            return (1 if self.rx else 0) | 2  # tx always ready
        return 0

    def write_reg(self, reg: int, value: int, now: int) -> None:
        if reg == 0:
            b = value & 0xFF
            self.host_tx.append(b)
            if self.tx_listener is not None:
                self.tx_listener(b)

    def next_event(self) -> Optional[int]:
        return None

    def tick(self, now: int) -> None:
        pass

    def reset(self) -> None:
        self.rx.clear()


class Timer:
    """Programmable periodic interval timer, denominated in cycles."""

    def __init__(self, pic: Pic):
        self.pic = pic
        self.interval = 0
        self.enabled = False
        self.count = 0
        self.next_fire: Optional[int] = None

    def read_reg(self, reg: int, now: int) -> int:
        if reg == 0:
            return self.interval
        if reg == 1:
            return 1 if self.enabled else 0
        if reg == 2:
            return self.count
        return 0

    def write_reg(self, reg: int, value: int, now: int) -> None:
        if reg == 0:
            self.interval = value & 0xFFFFFFFF
        elif reg == 1:
            enable = bool(value & 1)
            if enable and not self.enabled and self.interval > 0:
                self.count = 0
                self.next_fire = now + self.interval
            if not enable:
                self.next_fire = None
            self.enabled = enable and self.interval > 0
        elif reg == 2:
            self.count = value & 0xFFFFFFFF

    def next_event(self) -> Optional[int]:
        return self.next_fire if self.enabled else None

    def tick(self, now: int) -> None:
        while self.enabled and self.next_fire is not None and self.next_fire <= now:
            self.count += 1
            self.pic.raise_line(LINE_TIMER)
            self.next_fire += self.interval

    def reset(self) -> None:
        self.interval, self.enabled, self.count, self.next_fire = 0, False, 0, None


class Disk:
    """Sector-addressed disk with DMA READ.

    On command 1 (READ) the device copies count*512 bytes from its backing
    buffer into guest memory after bytes * cycles_per_byte service delay.
    The monitor may pre-perform the copy (full-virt emulation); the
    completion then only raises status/IRQ.
    """

    def __init__(self, idx: int, pic: Pic, machine):
        self.idx = idx
        self.pic = pic
        self.machine = machine
        self.backing = np.zeros(0, dtype=np.uint8)
        self.lba = 0
        self.count = 0
        self.dma_addr = 0
        self.status = 0
        self.complete_at: Optional[int] = None
        self.copy_done = False

    def seed(self, data: np.ndarray) -> None:
        self.backing = np.asarray(data, dtype=np.uint8)

    def seed_pattern(self, sectors: int) -> None:
        self.seed(pattern_bytes(self.idx, 0, sectors * SECTOR))

    def read_reg(self, reg: int, now: int) -> int:
        return (self.lba, self.count, self.dma_addr, 0, self.status)[reg] if reg <= 4 else 0

    def write_reg(self, reg: int, value: int, now: int) -> None:
        if reg == 0:
            self.lba = value & 0xFFFFFFFF
        elif reg == 1:
            self.count = value & 0xFFFFFFFF
        elif reg == 2:
            self.dma_addr = value & 0xFFFFFFFF
        elif reg == 3 and value == 1:
            self._start_read(now)

    def _start_read(self, now: int) -> None:
        if self.status & ST_BUSY:
            self.status |= ST_ERROR
            return
        nbytes = self.count * SECTOR
        end = (self.lba + self.count) * SECTOR
        if nbytes == 0 or end > len(self.backing):
            self.status = ST_ERROR
            self.pic.raise_line(LINE_DISK)
            return
        self.status = ST_BUSY
        self.copy_done = False
        delay = nbytes * self.machine.cost.disk_cycles_per_byte
        self.complete_at = now + delay

    def perform_dma(self) -> bool:
        """Copy backing -> guest memory; False if blocked (ownership/range)."""
        nbytes = self.count * SECTOR
        src = self.backing[self.lba * SECTOR:(self.lba + self.count) * SECTOR]
        ok = self.machine.dma_write(self.dma_addr, src)
        self.copy_done = True
        return ok

    def next_event(self) -> Optional[int]:
        return self.complete_at

    def tick(self, now: int) -> None:
        if self.complete_at is not None and self.complete_at <= now:
            self.complete_at = None
            ok = True
            if not self.copy_done:
                ok = self.perform_dma()
            self.status = ST_DONE if ok else ST_ERROR
            self.pic.raise_line(LINE_DISK)

    def reset(self) -> None:
        self.lba = self.count = self.dma_addr = self.status = 0
        self.complete_at = None
        self.copy_done = False


class Nic:
    """Frame transmitter: appends sent frames to a host-side log."""

    def __init__(self, pic: Pic, machine):
        self.pic = pic
        self.machine = machine
        self.tx_addr = 0
        self.tx_len = 0
        self.status = 0
        self.complete_at: Optional[int] = None
        self.tx_log: list[bytes] = []

    def read_reg(self, reg: int, now: int) -> int:
        return (self.tx_addr, self.tx_len, 0, self.status)[reg] if reg <= 3 else 0

    def write_reg(self, reg: int, value: int, now: int) -> None:
        if reg == 0:
            self.tx_addr = value & 0xFFFFFFFF
        elif reg == 1:
            self.tx_len = value & 0xFFFFFFFF
        elif reg == 2 and value == 1:
            self._start_send(now)

    def _start_send(self, now: int) -> None:
        if self.status & ST_BUSY:
            self.status |= ST_ERROR
            return
        if self.tx_len == 0:
            self.status = ST_ERROR
            self.pic.raise_line(LINE_NIC)
            return
        self.status = ST_BUSY
        self.complete_at = now + self.tx_len * self.machine.cost.nic_cycles_per_byte

    def next_event(self) -> Optional[int]:
        return self.complete_at

    def tick(self, now: int) -> None:
        if self.complete_at is not None and self.complete_at <= now:
            self.complete_at = None
            frame = self.machine.dma_read(self.tx_addr, self.tx_len)
            if frame is None:
                self.status = ST_ERROR
            else:
                self.tx_log.append(bytes(frame))
                self.status = ST_DONE
            self.pic.raise_line(LINE_NIC)

    def reset(self) -> None:
        self.tx_addr = self.tx_len = self.status = 0
        self.complete_at = None
        self.tx_log = []


class DeviceSet:
    """The fixed device complement plus the port-dispatch table."""

    def __init__(self, machine):
        self.pic = Pic()
        self.uart = Uart(self.pic)
        self.timer = Timer(self.pic)
        self.disks = [Disk(i, self.pic, machine) for i in range(3)]
        self.nic = Nic(self.pic, machine)
        self._unmapped_logged: set[int] = set()
        self._map = {}
        for i, port in enumerate(UART_PORTS):
            self._map[port] = (self.uart, i)
        for i, port in enumerate(TIMER_PORTS):
            self._map[port] = (self.timer, i)
        for i, base in enumerate(DISK_BASES):
            for r in range(5):
                self._map[base + r] = (self.disks[i], r)
        for r in range(4):
            self._map[NIC_BASE + r] = (self.nic, r)

    def all_devices(self):
        return [self.uart, self.timer, *self.disks, self.nic]

    def read(self, port: int, now: int) -> int:
        if port == 0x20:
            return self.pic.mask
        if port == 0x21:
            return self.pic.in_service
        entry = self._map.get(port)
        if entry is None:
            self._log_unmapped(port)
            return 0
        dev, reg = entry
        return dev.read_reg(reg, now) & 0xFFFFFFFF

    def write(self, port: int, value: int, now: int) -> None:
        if port == 0x20:
            self.pic.mask = value & 0xFF
            return
        if port == 0x21:
            self.pic.ack(value & 7)
            return
        entry = self._map.get(port)
        if entry is None:
            self._log_unmapped(port)
            return
        dev, reg = entry
        dev.write_reg(reg, value & 0xFFFFFFFF, now)

    def _log_unmapped(self, port: int) -> None:
        if port not in self._unmapped_logged:
            self._unmapped_logged.add(port)
            log.warning("access to unmapped port %#06x", port)

    def tick(self, now: int) -> None:
        self.timer.tick(now)
        for d in self.disks:
            d.tick(now)
        self.nic.tick(now)

    def next_event(self) -> Optional[int]:
        events = [d.next_event() for d in self.all_devices()]
        events = [e for e in events if e is not None]
        return min(events) if events else None

    def reset(self) -> None:
        self.pic.reset()
        for d in self.all_devices():
            d.reset()
