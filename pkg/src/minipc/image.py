"""Guest image container and the MPC1 on-disk format.

MPC1 layout, all little-endian:
    magic "MPC1" | u32 entry | u32 section_count |
    per section: u32 load_paddr | u32 byte_len | raw bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = b"MPC1"


class ImageError(Exception):
    pass


class LoadError(Exception):
    """Image cannot be placed into the machine (range or ownership)."""


@dataclass
class Image:
    entry: int
    sections: list[tuple[int, bytes]] = field(default_factory=list)

    def validate(self) -> None:
        spans = sorted((addr, addr + len(data)) for addr, data in self.sections)
        for (a0, a1), (b0, _b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ImageError(f"overlapping sections at {b0:#x}")

    def to_bytes(self) -> bytes:
        self.validate()
        out = bytearray(MAGIC)
        out += struct.pack("<II", self.entry & 0xFFFFFFFF, len(self.sections))
        for addr, data in self.sections:
            out += struct.pack("<II", addr & 0xFFFFFFFF, len(data))
            out += data
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Image":
        if blob[:4] != MAGIC:
            raise ImageError("bad magic")
        entry, count = struct.unpack_from("<II", blob, 4)
        off = 12
        sections = []
        for _ in range(count):
            if off + 8 > len(blob):
                raise ImageError("truncated section header")
            addr, length = struct.unpack_from("<II", blob, off)
            off += 8
            if off + length > len(blob):
                raise ImageError("truncated section data")
            sections.append((addr, bytes(blob[off:off + length])))
            off += length
        img = cls(entry=entry, sections=sections)
        img.validate()
        return img

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Image":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())
