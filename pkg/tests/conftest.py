import struct

import pytest

from minipc import isa
from minipc.image import Image
from minipc.machine import Machine


def words_blob(words):
    return b"".join(struct.pack("<I", w & 0xFFFFFFFF) for w in words)


def enc(opcode, rd=0, rs=0, imm=0):
    return isa.encode(isa.Instruction(opcode, rd=rd, rs=rs, imm16=imm))


@pytest.fixture
def machine():
    return Machine()


def boot(machine, words, entry=0x100, at=0x100):
    machine.load_image(Image(entry=entry, sections=[(at, words_blob(words))]))
    return machine
