import pytest
from hypothesis import given, strategies as st

from minipc import isa
from minipc.asm import AsmErrors, assemble, disassemble_word
from minipc.image import Image


def test_movi_example_bytes():
    img = assemble(".org 0x100\nstart: movi r1, 5\n")
    assert img.sections == [(0x100, bytes([0x05, 0x00, 0x80, 0x08]))]
    assert img.entry == 0x100


def test_duplicate_label_reports_both_lines():
    src = ".org 0\nx: nop\nx: nop\n"
    with pytest.raises(AsmErrors) as ei:
        assemble(src)
    assert any("duplicate label 'x'" in str(e) for e in ei.value.errors)
    assert ei.value.errors[0].line == 3


def test_undefined_label_has_line_number():
    with pytest.raises(AsmErrors) as ei:
        assemble(".org 0\njmp nowhere\n")
    err = ei.value.errors[0]
    assert err.line == 2 and "undefined label" in err.message


def test_multiple_errors_reported_in_one_run():
    src = ".org 0\nmovi r1, 0x12345\nfrobnicate r1\njz missing\n"
    with pytest.raises(AsmErrors) as ei:
        assemble(src)
    assert len(ei.value.errors) == 3


def test_immediate_range_error():
    with pytest.raises(AsmErrors) as ei:
        assemble(".org 0\nmovi r1, 70000\n")
    assert "out of 16-bit range" in str(ei.value.errors[0])


def test_forward_branch_offset():
    src = """.org 0x100
jz done
nop
nop
nop
done: halt
"""
    img = assemble(src)
    word = int.from_bytes(img.sections[0][1][:4], "little")
    ins = isa.decode(word)
    assert ins.opcode == isa.JZ and ins.imm16 == 3   # three words ahead


def test_call_takes_byte_address():
    img = assemble(".org 0x100\ncall 0x400\nhalt\n")
    word = int.from_bytes(img.sections[0][1][:4], "little")
    ins = isa.decode(word)
    assert ins.opcode == isa.CALL and (ins.imm16 & 0xFFFF) == 0x100  # word address


def test_org_starts_new_section():
    img = assemble(".org 0\n.word 1\n.org 0x100\nnop\n")
    assert [a for a, _ in img.sections] == [0, 0x100]


def test_word_directive_takes_labels():
    img = assemble(".org 0\n.word handler\n.org 0x40\nhandler: halt\n")
    assert img.sections[0][1] == (0x40).to_bytes(4, "little")


def test_ascii_directive():
    img = assemble('.org 0\n.ascii "hi\\n"\n')
    assert img.sections[0][1] == b"hi\n"


def test_out_port_register_form():
    img = assemble(".org 0\nout 0x43, r1\n")
    ins = isa.decode(int.from_bytes(img.sections[0][1], "little"))
    assert (ins.opcode, ins.rd, ins.imm16) == (isa.OUT, 1, 0x43)


def test_iretu_roundtrip():
    img = assemble(".org 0\niretu r3\n")
    word = int.from_bytes(img.sections[0][1], "little")
    assert disassemble_word(0, word) == "iretu r3"
    img2 = assemble(f".org 0\n{disassemble_word(0, word)}\n")
    assert img2.sections[0][1] == img.sections[0][1]


@given(
    opcode=st.integers(0, isa.MAX_OPCODE),
    rd=st.integers(0, 7),
    rs=st.integers(0, 7),
    imm=st.integers(-0x8000, 0x7FFF),
)
def test_assemble_disassemble_identity(opcode, rd, rs, imm):
    word = isa.encode(isa.Instruction(opcode, rd=rd, rs=rs, imm16=imm))
    line = disassemble_word(0x200, word)
    src = f".org 0x200\n{line}\n"
    img = assemble(src)
    assert int.from_bytes(img.sections[0][1], "little") == word


@given(word=st.integers(0, 0xFFFFFFFF))
def test_assemble_disassemble_identity_any_word(word):
    line = disassemble_word(0x200, word)
    img = assemble(f".org 0x200\n{line}\n")
    assert int.from_bytes(img.sections[0][1], "little") == word


def test_overlapping_sections_rejected():
    with pytest.raises(Exception):
        assemble(".org 0\nnop\nnop\n.org 4\nnop\n")
