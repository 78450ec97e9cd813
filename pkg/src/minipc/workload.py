"""Harness side of the data-transfer workload.

Seeds the disks with the deterministic pattern, pokes the boot-time
parameter block, reassembles the NIC transmit log, and knows the expected
byte stream so integrity can be checked bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .asm import assemble
from .devices import SECTOR, pattern_bytes
from .image import Image
from .machine import CostModel, Machine
from .monitor import MonitorCtx, MonitorMode, boot_monitored

PARAM_BLOCK = 0x0F00
FAULT_WORD = 0x0F60
CKSUM_LOG = 0x0E00
# The tick period must dwarf the worst-case per-tick handling chain
# (intercept + ack trap + disable trap under heavy cost models), or a
# stale tick fires during the timer-disable trap and the delivery pattern
# stops being mode-independent.
MIN_TICK_PERIOD = 2_000_000
MAX_TICKS_PER_SEGMENT = 8
HEADER = struct.Struct("<ccHI")   # 'U' 'D' seq len


def program_source(name: str) -> str:
    return (resources.files("minipc") / "programs" / f"{name}.masm").read_text()


def program_image(name: str) -> Image:
    return assemble(program_source(name))


@dataclass
class XferParams:
    rate_mbps: float
    total_bytes: int = 2 * 1024 * 1024
    segment_bytes: int = 1024 * 1024
    clock_hz: int = 100_000_000

    def __post_init__(self):
        if self.total_bytes % SECTOR:
            raise ValueError("total_bytes must be divisible by 512")
        if self.segment_bytes % SECTOR or self.segment_bytes <= 0:
            raise ValueError("segment_bytes must be a positive multiple of 512")
        if self.segment_bytes % 16:
            raise ValueError("segment_bytes must be divisible by 16")
        if self.segments > 64:
            raise ValueError("more than 64 segments (checksum log would overflow)")
        if self.rate_mbps <= 0:
            raise ValueError("rate must be positive")

    @property
    def segments(self) -> int:
        return -(-self.total_bytes // self.segment_bytes)

    @property
    def rate_bytes_per_s(self) -> float:
        return self.rate_mbps * 1e6 / 8

    @property
    def segment_interval_cycles(self) -> int:
        return round(self.segment_bytes / self.rate_bytes_per_s * self.clock_hz)

    @property
    def ticks_per_segment(self) -> int:
        return max(1, min(MAX_TICKS_PER_SEGMENT,
                          self.segment_interval_cycles // MIN_TICK_PERIOD))

    @property
    def tick_period(self) -> int:
        return max(1, self.segment_interval_cycles // self.ticks_per_segment)

    @property
    def bytes_per_tick(self) -> int:
        return -(-self.segment_bytes // self.ticks_per_segment)

    @property
    def ideal_cycles(self) -> int:
        return round(self.total_bytes / self.rate_bytes_per_s * self.clock_hz)


def seed_disks(machine: Machine, params: XferParams) -> None:
    # Each disk holds enough sectors for its share of every segment.
    per_disk_sectors = -(-params.total_bytes // SECTOR // 3) + 2
    for disk in machine.devices.disks:
        disk.seed_pattern(per_disk_sectors)


def poke_params(machine: Machine, params: XferParams) -> None:
    blob = struct.pack(
        "<IIII",
        params.bytes_per_tick,
        params.tick_period,
        params.total_bytes,
        params.segment_bytes,
    )
    machine.write_phys(PARAM_BLOCK, blob)


def boot_xfer(mode: MonitorMode, cost: CostModel, params: XferParams,
              image: Image | None = None, mem_mib: int = 16) -> MonitorCtx:
    ctx = boot_monitored(image or program_image("xfer"), mode, cost, mem_mib=mem_mib)
    seed_disks(ctx.machine, params)
    poke_params(ctx.machine, params)
    return ctx


def expected_stream(params: XferParams) -> bytes:
    """The byte stream the datagrams must reassemble to, from first principles."""
    out = bytearray()
    cursors = [0, 0, 0]
    remaining = params.total_bytes
    while remaining > 0:
        seg = min(remaining, params.segment_bytes)
        sectors = seg // SECTOR
        q, rem = divmod(sectors, 3)
        counts = [q + (1 if rem >= 1 else 0), q + (1 if rem >= 2 else 0), q]
        for d, c in enumerate(counts):
            out += pattern_bytes(d, cursors[d] * SECTOR, c * SECTOR).tobytes()
            cursors[d] += c
        remaining -= seg
    return bytes(out)


class IntegrityError(Exception):
    pass


def reassemble(frames: list[bytes], params: XferParams) -> bytes:
    """Order datagrams by sequence number and validate framing."""
    if len(frames) != params.segments:
        raise IntegrityError(
            f"expected {params.segments} datagrams, NIC log has {len(frames)}")
    by_seq = {}
    for frame in frames:
        if len(frame) < HEADER.size:
            raise IntegrityError("short datagram")
        magic0, magic1, seq, length = HEADER.unpack_from(frame)
        if magic0 != b"U" or magic1 != b"D":
            raise IntegrityError(f"bad datagram magic {magic0!r}{magic1!r}")
        payload = frame[HEADER.size:]
        if len(payload) != length:
            raise IntegrityError(
                f"datagram {seq}: header says {length} bytes, got {len(payload)}")
        if seq in by_seq:
            raise IntegrityError(f"duplicate sequence number {seq}")
        by_seq[seq] = payload
    if sorted(by_seq) != list(range(params.segments)):
        raise IntegrityError(f"sequence numbers {sorted(by_seq)} not contiguous")
    return b"".join(by_seq[s] for s in range(params.segments))


def verify_transfer(ctx: MonitorCtx, params: XferParams) -> None:
    """Raise IntegrityError unless the NIC log matches the disk source bytes."""
    fault = struct.unpack_from("<I", ctx.machine.read_phys(FAULT_WORD, 4))[0]
    if fault:
        raise IntegrityError(f"guest recorded fault vector {fault - 1}")
    got = reassemble(ctx.machine.devices.nic.tx_log, params)
    want = expected_stream(params)
    if got != want:
        first = next(i for i, (a, b) in enumerate(zip(got, want)) if a != b) \
            if len(got) == len(want) else min(len(got), len(want))
        raise IntegrityError(f"reassembled stream differs from source at byte {first}")


def guest_checksums(machine: Machine, params: XferParams) -> list[int]:
    raw = machine.read_phys(CKSUM_LOG, 4 * params.segments)
    return list(struct.unpack(f"<{params.segments}I", raw))


def expected_checksums(params: XferParams) -> list[int]:
    """Independent recomputation of the guest's 32-bit word sums."""
    stream = expected_stream(params)
    sums = []
    off = 0
    remaining = params.total_bytes
    while remaining > 0:
        seg = min(remaining, params.segment_bytes)
        words = np.frombuffer(stream[off:off + seg], dtype="<u4")
        sums.append(int(words.sum(dtype=np.uint64) & 0xFFFFFFFF))
        off += seg
        remaining -= seg
    return sums
