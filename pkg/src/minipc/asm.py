"""Two-pass assembler and disassembler for MiniPC-32 `.masm` sources.

Grammar, per line:
    [label:] [directive | mnemonic operands] [; comment]

Directives: `.org <addr>` starts a new section, `.word <value|label>`,
`.ascii "<text>"`.  Registers are r0..r7; immediates are decimal or 0x hex.
Labels may be used wherever an immediate fits:

    - branch targets (jmp/jz/jnz/jlt) are word-relative to the next
      instruction; a bare number is taken as the raw word offset
    - call takes an absolute byte address (label or number), stored /4
    - elsewhere a label contributes its address value

Forward references are fine; the first pass only assigns addresses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import isa
from .image import Image

_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass
class AsmError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


class AsmErrors(Exception):
    def __init__(self, errors: list[AsmError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass
class _Item:
    line: int
    addr: int
    kind: str          # "instr" | "word" | "ascii"
    mnemonic: str = ""
    operands: tuple = ()
    value: object = None


def _parse_int(tok: str):
    tok = tok.strip()
    neg = tok.startswith("-")
    if neg:
        tok = tok[1:]
    if tok.lower().startswith("0x"):
        v = int(tok, 16)
    elif tok.isdigit():
        v = int(tok, 10)
    else:
        return None
    return -v if neg else v


def _split_line(line: str):
    line = line.split(";", 1)[0].rstrip()
    label = None
    m = re.match(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$", line)
    if m:
        label, line = m.group(1), m.group(2)
    return label, line.strip()


def assemble(source: str) -> Image:
    """Assemble text into an Image; raises AsmErrors with line numbers."""
    errors: list[AsmError] = []
    labels: dict[str, int] = {}
    items: list[_Item] = []
    sections: list[tuple[int, int]] = []   # (start, lineno) for pass 2 assembly
    addr = 0
    section_started = False

    for lineno, raw in enumerate(source.splitlines(), start=1):
        label, body = _split_line(raw)
        if label is not None:
            if label in labels:
                errors.append(AsmError(lineno, f"duplicate label '{label}'"))
            else:
                labels[label] = addr
        if not body:
            continue
        if body.startswith(".org"):
            tok = body[4:].strip()
            v = _parse_int(tok)
            if v is None or v < 0:
                errors.append(AsmError(lineno, f"bad .org address '{tok}'"))
                continue
            addr = v
            sections.append((addr, lineno))
            section_started = True
            if label is not None:
                labels[label] = addr
            continue
        if not section_started:
            sections.append((addr, lineno))
            section_started = True
        if body.startswith(".word"):
            items.append(_Item(lineno, addr, "word", value=body[5:].strip()))
            addr += 4
            continue
        if body.startswith(".ascii"):
            m = re.match(r'^\.ascii\s+"((?:[^"\\]|\\.)*)"\s*$', body)
            if not m:
                errors.append(AsmError(lineno, "bad .ascii syntax"))
                continue
            text = m.group(1).encode().decode("unicode_escape").encode("latin-1")
            items.append(_Item(lineno, addr, "ascii", value=text))
            addr += len(text)
            continue
        parts = body.split(None, 1)
        mnemonic = parts[0].lower()
        ops = tuple(o.strip() for o in parts[1].split(",")) if len(parts) > 1 else ()
        if mnemonic not in isa.OPCODE_BY_MNEMONIC and mnemonic != "iretu":
            errors.append(AsmError(lineno, f"unknown mnemonic '{mnemonic}'"))
            continue
        items.append(_Item(lineno, addr, "instr", mnemonic=mnemonic, operands=ops))
        addr += 4

    # pass 2: encode
    out_sections: list[tuple[int, bytearray]] = []
    cur_start, cur_buf = None, None

    def _flush():
        nonlocal cur_start, cur_buf
        if cur_buf is not None and len(cur_buf):
            out_sections.append((cur_start, cur_buf))
        cur_start, cur_buf = None, None

    def _emit(at: int, word: int):
        nonlocal cur_start, cur_buf
        if cur_buf is None or cur_start + len(cur_buf) != at:
            _flush()
            cur_start, cur_buf = at, bytearray()
        cur_buf += (word & 0xFFFFFFFF).to_bytes(4, "little")

    def _emit_bytes(at: int, data: bytes):
        nonlocal cur_start, cur_buf
        if cur_buf is None or cur_start + len(cur_buf) != at:
            _flush()
            cur_start, cur_buf = at, bytearray()
        cur_buf += data

    def _resolve(tok: str, line: int):
        v = _parse_int(tok)
        if v is not None:
            return v
        if _LABEL_RE.match(tok):
            if tok in labels:
                return labels[tok]
            errors.append(AsmError(line, f"undefined label '{tok}'"))
            return None
        errors.append(AsmError(line, f"bad operand '{tok}'"))
        return None

    def _reg(tok: str, line: int):
        m = re.match(r"^r([0-7])$", tok.lower())
        if not m:
            errors.append(AsmError(line, f"expected register, got '{tok}'"))
            return None
        return int(m.group(1))

    def _check_imm(v: int, line: int):
        if not -0x8000 <= v <= 0xFFFF:
            errors.append(AsmError(line, f"immediate {v} out of 16-bit range"))
            return None
        return v

    for it in items:
        if it.kind == "ascii":
            _emit_bytes(it.addr, it.value)
            continue
        if it.kind == "word":
            v = _resolve(it.value, it.line)
            if v is not None:
                _emit(it.addr, v)
            continue
        mnem, ops, line = it.mnemonic, it.operands, it.line
        if mnem == "iretu":
            if len(ops) != 1:
                errors.append(AsmError(line, "iretu takes one register"))
                continue
            rs = _reg(ops[0], line)
            if rs is None:
                continue
            _emit(it.addr, isa.encode(isa.Instruction(isa.IRET, rd=1, rs=rs)))
            continue
        opcode = isa.OPCODE_BY_MNEMONIC[mnem]
        fmt = isa.FORMATS[opcode]
        want = {"": 0, "d": 1, "ds": 2, "di": 2, "dsi": (2, 3),
                "rel": 1, "i": 1, "port_d": 2}[fmt]
        nops = len(ops)
        ok = nops in want if isinstance(want, tuple) else nops == want
        if not ok:
            errors.append(AsmError(line, f"{mnem} takes {want} operand(s), got {nops}"))
            continue
        rd = rs = 0
        imm = 0
        bad = False
        if fmt == "d":
            rd = _reg(ops[0], line)
            bad = rd is None
        elif fmt == "ds":
            rd, rs = _reg(ops[0], line), _reg(ops[1], line)
            bad = rd is None or rs is None
        elif fmt == "di":
            rd = _reg(ops[0], line)
            v = _resolve(ops[1], line) if rd is not None else None
            bad = rd is None or v is None
            if not bad:
                imm = _check_imm(v, line)
                bad = imm is None
        elif fmt == "dsi":
            rd, rs = _reg(ops[0], line), _reg(ops[1], line)
            v = _resolve(ops[2], line) if nops == 3 else 0
            bad = rd is None or rs is None or v is None
            if not bad:
                imm = _check_imm(v, line)
                bad = imm is None
        elif fmt == "rel":
            v = _parse_int(ops[0])
            if v is not None:
                imm = v                      # raw word offset
            elif _LABEL_RE.match(ops[0]):
                if ops[0] not in labels:
                    errors.append(AsmError(line, f"undefined label '{ops[0]}'"))
                    bad = True
                else:
                    delta = labels[ops[0]] - (it.addr + 4)
                    if delta % 4:
                        errors.append(AsmError(line, "branch target not word-aligned"))
                        bad = True
                    else:
                        imm = delta // 4
            else:
                errors.append(AsmError(line, f"bad operand '{ops[0]}'"))
                bad = True
            if not bad:
                imm = _check_imm(imm, line)
                bad = imm is None
        elif fmt == "i":
            v = _resolve(ops[0], line)
            bad = v is None
            if not bad:
                if opcode == isa.CALL:
                    if v % 4 or not 0 <= v < (1 << 18):
                        errors.append(AsmError(
                            line, f"call target {v:#x} must be word-aligned and below 256 KiB"))
                        bad = True
                    else:
                        imm = v // 4
                else:
                    imm = _check_imm(v, line)
                    bad = imm is None
        elif fmt == "port_d":
            v = _resolve(ops[0], line)
            rd = _reg(ops[1], line)
            bad = v is None or rd is None
            if not bad:
                imm = _check_imm(v, line)
                bad = imm is None
        if bad:
            continue
        _emit(it.addr, isa.encode(isa.Instruction(opcode, rd=rd, rs=rs, imm16=imm)))

    _flush()
    if errors:
        raise AsmErrors(errors)
    entry = labels.get("start", labels.get("_start"))
    if entry is None:
        entry = min((a for a, _ in out_sections), default=0)
    img = Image(entry=entry, sections=[(a, bytes(b)) for a, b in out_sections])
    img.validate()
    img.labels = dict(labels)   # handy for tests and tooling; not serialized
    return img


def disassemble_word(addr: int, word: int) -> str:
    """Canonical listing line for one word (iretu-aware)."""
    if word >> 26 == isa.IRET and (word >> 23) & 7 == 1 and word & 0xFFFF == 0:
        return f"iretu r{(word >> 20) & 7}"
    return isa.disassemble_word(addr, word)


def disassemble_range(data: bytes, base: int) -> list[tuple[int, str]]:
    lines = []
    for off in range(0, len(data) - len(data) % 4, 4):
        w = int.from_bytes(data[off:off + 4], "little")
        lines.append((base + off, disassemble_word(base + off, w)))
    return lines
