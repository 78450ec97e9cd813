"""MiniPC-32 instruction set: encoding, decoding, and the opcode table.

Word layout (32-bit, little-endian in memory):

    bits [31:26] opcode   [25:23] rd   [22:20] rs   [15:0] imm16 (signed)

All instructions are one word; the program counter moves in 4-byte steps.
"""

from __future__ import annotations

from dataclasses import dataclass

# Opcode numbers. The table is closed: anything above IDLE is illegal.
NOP = 0
HALT = 1
MOVI = 2
MOV = 3
ADD = 4
SUB = 5
AND = 6
OR = 7
XOR = 8
SHL = 9
SHR = 10
CMP = 11
JMP = 12
JZ = 13
JNZ = 14
JLT = 15
LOAD = 16
STORE = 17
PUSH = 18
POP = 19
CALL = 20
RET = 21
IN = 22
OUT = 23
SYSCALL = 24
IRET = 25
BRK = 26
LPTBR = 27
LIVT = 28
STI = 29
CLI = 30
SETTF = 31
IDLE = 32

MAX_OPCODE = IDLE

MNEMONICS = [
    "nop", "halt", "movi", "mov", "add", "sub", "and", "or", "xor",
    "shl", "shr", "cmp", "jmp", "jz", "jnz", "jlt", "load", "store",
    "push", "pop", "call", "ret", "in", "out", "syscall", "iret",
    "brk", "lptbr", "livt", "sti", "cli", "settf", "idle",
]
OPCODE_BY_MNEMONIC = {m: i for i, m in enumerate(MNEMONICS)}

# Operand shapes, keyed by opcode. Drives the assembler, disassembler and
# encode() validation.
#   ""        no operands
#   "d"       one register (rd)
#   "ds"      two registers (rd, rs)
#   "di"      register + immediate (rd, imm16)
#   "dsi"     two registers + immediate
#   "i"       immediate only
#   "rel"     immediate only, pc-relative branch target in words
#   "port_d"  OUT: port immediate first, then register
FORMATS = {
    NOP: "", HALT: "", RET: "", SYSCALL: "", IRET: "", BRK: "",
    STI: "", CLI: "", IDLE: "",
    MOVI: "di",
    MOV: "ds", ADD: "ds", SUB: "ds", AND: "ds", OR: "ds", XOR: "ds",
    SHL: "ds", SHR: "ds", CMP: "ds",
    JMP: "rel", JZ: "rel", JNZ: "rel", JLT: "rel",
    LOAD: "dsi", STORE: "dsi",
    PUSH: "d", POP: "d", LPTBR: "d", LIVT: "d",
    CALL: "i", SETTF: "i",
    IN: "di",
    OUT: "port_d",
}

# SUPV-only instructions; executing them in USER mode raises the
# illegal-instruction vector.
PRIVILEGED = frozenset({HALT, IN, OUT, IRET, LPTBR, LIVT, STI, CLI, SETTF, IDLE})

# Flags word bits.
FLAG_Z = 1
FLAG_N = 2
FLAG_I = 4  # interrupt enable; saved/restored with the rest of the flags

# Trap vectors.
VEC_ILLEGAL = 0
VEC_PAGEFAULT = 1
VEC_ALIGN = 2
VEC_BRK = 3
VEC_SYSCALL = 4
VEC_TIMER = 8
VEC_DISK = 9
VEC_NIC = 10
VEC_UART = 11


class IllegalInstruction(Exception):
    """Decoded word has an undefined opcode field."""


class EncodingError(Exception):
    """Instruction fields out of range for the word layout."""


@dataclass(frozen=True)
class Instruction:
    opcode: int
    rd: int = 0
    rs: int = 0
    imm16: int = 0  # signed

    @property
    def mnemonic(self) -> str:
        return MNEMONICS[self.opcode]


def sext16(value: int) -> int:
    value &= 0xFFFF
    return value - 0x10000 if value & 0x8000 else value


def decode(word: int) -> Instruction:
    """Decode a 32-bit word; raises IllegalInstruction on undefined opcodes."""
    word &= 0xFFFFFFFF
    opcode = word >> 26
    if opcode > MAX_OPCODE:
        raise IllegalInstruction(f"opcode {opcode} in word {word:#010x}")
    return Instruction(
        opcode=opcode,
        rd=(word >> 23) & 7,
        rs=(word >> 20) & 7,
        imm16=sext16(word),
    )


def encode(instr: Instruction) -> int:
    """Inverse of decode over the defined opcode set."""
    if not 0 <= instr.opcode <= MAX_OPCODE:
        raise EncodingError(f"undefined opcode {instr.opcode}")
    if not 0 <= instr.rd <= 7 or not 0 <= instr.rs <= 7:
        raise EncodingError(f"register index out of range in {instr}")
    # imm16 is a signed field, but unsigned 16-bit values (ports, absolute
    # call targets) are accepted and stored as their low 16 bits.
    if not -0x8000 <= instr.imm16 <= 0xFFFF:
        raise EncodingError(f"imm16 {instr.imm16} out of range")
    return (
        (instr.opcode << 26)
        | (instr.rd << 23)
        | (instr.rs << 20)
        | (instr.imm16 & 0xFFFF)
    )


def disassemble_word(addr: int, word: int) -> str:
    """One canonical lowercase listing line for a word at addr.

    Unknown opcodes render as a `.word` literal so output always
    re-assembles to the same word.
    """
    try:
        ins = decode(word)
    except IllegalInstruction:
        return f".word {word & 0xFFFFFFFF:#010x}"
    if word & 0x000F0000:
        # bits [19:16] belong to no field; such words only round-trip as data
        return f".word {word & 0xFFFFFFFF:#010x}"
    fmt = FORMATS[ins.opcode]
    name = ins.mnemonic
    if fmt == "":
        # Nonzero ignored fields still need to round-trip.
        if ins.rd or ins.rs or (ins.imm16 & 0xFFFF):
            return f".word {word & 0xFFFFFFFF:#010x}"
        return name
    if fmt == "d":
        if ins.rs or (ins.imm16 & 0xFFFF):
            return f".word {word & 0xFFFFFFFF:#010x}"
        return f"{name} r{ins.rd}"
    if fmt == "ds":
        if ins.imm16 & 0xFFFF:
            return f".word {word & 0xFFFFFFFF:#010x}"
        return f"{name} r{ins.rd}, r{ins.rs}"
    if fmt == "di":
        if ins.rs:
            return f".word {word & 0xFFFFFFFF:#010x}"
        if ins.opcode == IN:
            return f"{name} r{ins.rd}, {ins.imm16 & 0xFFFF:#x}"
        return f"{name} r{ins.rd}, {ins.imm16}"
    if fmt == "dsi":
        return f"{name} r{ins.rd}, r{ins.rs}, {ins.imm16}"
    if fmt == "rel":
        if ins.rd or ins.rs:
            return f".word {word & 0xFFFFFFFF:#010x}"
        target = (addr + 4 + ins.imm16 * 4) & 0xFFFFFFFF
        return f"{name} {ins.imm16}  ; -> {target:#x}"
    if fmt == "i":
        if ins.rd or ins.rs:
            return f".word {word & 0xFFFFFFFF:#010x}"
        if ins.opcode == CALL:
            return f"{name} {(ins.imm16 & 0xFFFF) * 4:#x}"
        return f"{name} {ins.imm16 & 0xFFFF}"
    if fmt == "port_d":
        if ins.rs:
            return f".word {word & 0xFFFFFFFF:#010x}"
        return f"{name} {ins.imm16 & 0xFFFF:#x}, r{ins.rd}"
    raise AssertionError(fmt)
