"""A guided tour of the MiniPC-32 machine: assemble a small program,
single-step it, turn on paging, and watch protection faults fire.

Run:  python3 demos/machine_tour.py
"""

import struct

from minipc import core, isa
from minipc.asm import assemble, disassemble_range
from minipc.machine import Machine

SOURCE = """
.org 0x0
  .word 0          ; vector 0: illegal instruction
  .word handler    ; vector 1: page fault
.org 0x100
start:
  movi r1, 6
  movi r2, 7
  add r1, r2       ; r1 = 13
  movi r3, 0x2000
  store r1, r3, 0  ; spill to memory
  load r4, r3, 0
  halt
handler:
  movi r5, 1
  halt
"""

img = assemble(SOURCE)
print("assembled sections:", [(hex(a), len(d)) for a, d in img.sections])
print("\nlisting:")
for addr, data in img.sections:
    if addr == 0x100:
        for a, line in disassemble_range(data, addr):
            print(f"  {a:08x}  {line}")

m = Machine()
m.load_image(img)

print("\nsingle-stepping:")
for _ in range(4):
    m.step()
    regs = m.regs_snapshot()
    print(f"  pc={regs['pc']:#06x} r1={regs['r1']} r2={regs['r2']} "
          f"flags={regs['flags']}")

print("\nrunning to completion:")
exit_reason = m.run(1000)
print(f"  {type(exit_reason).__name__}, r4 = {m.reg(4)}, "
      f"retired = {m.retired}, cycles = {m.cycles_total}")

# Same program, but now behind a page table that maps nothing at 0x2000:
# the STORE page-faults and the handler at `handler` records it.
m2 = Machine()
m2.load_image(img)
m2.write_phys(0x4000, struct.pack("<I", 0x0003))   # map page 0 only, P|W
m2.state[core.S_PTBR] = 0x4000
exit_reason = m2.run(1000)
print(f"\nwith paging on and 0x2000 unmapped: r5 = {m2.reg(5)} "
      f"(fault handler ran), faulting vaddr in r6 = {m2.reg(6):#x}")
