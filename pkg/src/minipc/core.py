"""Interpreter core for the MiniPC-32 simulator.

The hot loop operates on flat numpy arrays so numba can compile it:

    state  int64[NSLOTS]   registers, control state, counters, exit details
    mem    uint8[]         physical memory
    own    uint8[]         frame ownership (0 = guest, 1 = monitor)
    trace  uint64[1]       rolling FNV-1a trace digest (optional)

The core never touches devices.  Port I/O instructions, monitor-frame
faults, debug events and halts return to the caller as exit codes; the
machine wrapper dispatches them.  Guest trap delivery (faults, syscall,
in-guest BRK) happens inside the core so tight fault loops stay fast.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import isa

# --- state slots ---------------------------------------------------------
# 0..7 are r0..r7 so register indexes address the array directly.
S_PC = 8
S_FLAGS = 9
S_MODE = 10          # 0 USER, 1 SUPV
S_PTBR = 11
S_IVT = 12
S_TF = 13
S_EPC = 14
S_EFLAGS = 15
S_EMODE = 16
S_INFAULT = 17       # a fault handler is active (vectors 0/1/2)
S_HALTED = 18
S_GSTATE = 19        # 0 HOST, 1 GUEST
S_CYC_TOTAL = 20
S_CYC_IDLE = 21
S_CYC_MON = 22
S_RETIRED = 23
S_INTERCEPT_DEBUG = 24
S_TRACE_EN = 25
S_CPI = 26
S_STOP_CYCLE = 27
S_EXIT_A = 28
S_EXIT_B = 29
S_EXIT_C = 30
S_IDLE_PARKED = 31
S_LAST_VECTOR = 32   # last guest trap vector delivered (-1 none)
S_RETIRE_STOP = 33   # absolute retired count to stop at (0 = disabled)
S_MEMSIZE = 34
S_STI_SHADOW = 35    # IRQ delivery suppressed until the next retirement
NSLOTS = 40

# access kinds
ACC_READ = 0
ACC_WRITE = 1
ACC_FETCH = 2

# translate status
T_OK = 0
T_PAGEFAULT = 1
T_MONFAULT = 2

# core exit codes
EXIT_STOP = 0        # stop_cycle or retire_stop reached (or trap just delivered)
EXIT_PORT_IN = 1     # exit_a = port, exit_b = rd index
EXIT_PORT_OUT = 2    # exit_a = port, exit_b = value
EXIT_MONFAULT = 3    # exit_a = paddr, exit_b = access, exit_c = pc
EXIT_BREAK = 4       # exit_a = pc of BRK
EXIT_STEP = 5        # exit_a = pc after the stepped instruction
EXIT_HALT = 6        # exit_a = pc of HALT
EXIT_DFAULT = 7      # exit_a = pc at the failed delivery
EXIT_RESCHED = 8     # interrupt enable may have flipped (STI/IRET retired)

_PRIV_MASK = 0
for _op in isa.PRIVILEGED:
    _PRIV_MASK |= 1 << _op

_FNV_PRIME = np.uint64(0x100000001B3)
_U64_MASK = 0xFFFFFFFFFFFFFFFF


@njit(cache=True)
def fold(trace, x):
    h = trace[0] ^ np.uint64(x & _U64_MASK)
    trace[0] = h * _FNV_PRIME


@njit(cache=True)
def read32(mem, addr):
    return (
        int(mem[addr])
        | (int(mem[addr + 1]) << 8)
        | (int(mem[addr + 2]) << 16)
        | (int(mem[addr + 3]) << 24)
    )


@njit(cache=True)
def write32(mem, addr, value):
    mem[addr] = value & 0xFF
    mem[addr + 1] = (value >> 8) & 0xFF
    mem[addr + 2] = (value >> 16) & 0xFF
    mem[addr + 3] = (value >> 24) & 0xFF


@njit(cache=True)
def translate(mem, own, ptbr, mode, gstate, memsize, vaddr, acc):
    """Virtual-to-physical translation with the three protection checks.

    Returns (status, paddr). A page-table walk is a physical access and
    undergoes only the ownership check.  Physical accesses beyond memory
    raise the page-fault status (the unmapped case).
    """
    vaddr = vaddr & 0xFFFFFFFF
    if ptbr == 0:
        paddr = vaddr
    else:
        pte_addr = ptbr + 4 * (vaddr >> 12)
        if pte_addr + 4 > memsize:
            return T_PAGEFAULT, 0
        if gstate == 1 and own[pte_addr >> 12] == 1:
            return T_MONFAULT, pte_addr
        pte = read32(mem, pte_addr)
        if pte & 0x1 == 0:
            return T_PAGEFAULT, 0
        if acc == ACC_WRITE and pte & 0x2 == 0:
            return T_PAGEFAULT, 0
        if mode == 0 and pte & 0x4 == 0:
            return T_PAGEFAULT, 0
        paddr = ((pte >> 12) << 12) | (vaddr & 0xFFF)
    if paddr + 4 > memsize:
        return T_PAGEFAULT, 0
    if gstate == 1 and own[paddr >> 12] == 1:
        return T_MONFAULT, paddr
    return T_OK, paddr


@njit(cache=True)
def deliver_trap(state, mem, own, vector, epc_value, fault_vaddr, has_vaddr):
    """Guest trap delivery.  Returns 0 on success, EXIT_DFAULT on failure.

    Faults (vectors 0..2) nest into DoubleFault while a fault handler is
    active.  Delivery clears TF and the interrupt-enable flag after saving
    the old flags word.
    """
    if vector <= 2:
        if state[S_INFAULT] != 0:
            return EXIT_DFAULT
        state[S_INFAULT] = 1
    slot = state[S_IVT] + 4 * vector
    if slot < 0 or slot + 4 > state[S_MEMSIZE]:
        return EXIT_DFAULT
    if state[S_GSTATE] == 1 and own[slot >> 12] == 1:
        return EXIT_DFAULT
    handler = read32(mem, slot)
    state[S_EPC] = epc_value & 0xFFFFFFFF
    state[S_EFLAGS] = state[S_FLAGS]
    state[S_EMODE] = state[S_MODE]
    state[S_MODE] = 1
    state[S_FLAGS] = state[S_FLAGS] & ~isa.FLAG_I
    state[S_TF] = 0
    if has_vaddr:
        state[6] = fault_vaddr & 0xFFFFFFFF
    state[S_PC] = handler & 0xFFFFFFFF
    state[S_LAST_VECTOR] = vector
    return 0


@njit(cache=True)
def core_run(state, mem, own, trace):
    """Execute instructions until an exit condition; returns an exit code."""
    cpi = state[S_CPI]
    tracing = state[S_TRACE_EN] != 0
    while True:
        if state[S_CYC_TOTAL] >= state[S_STOP_CYCLE]:
            return EXIT_STOP
        if state[S_RETIRE_STOP] != 0 and (
            state[S_RETIRED] >= state[S_RETIRE_STOP] or state[S_LAST_VECTOR] >= 0
        ):
            return EXIT_STOP

        pc = state[S_PC] & 0xFFFFFFFF

        # fetch
        if pc & 3 != 0:
            r = deliver_trap(state, mem, own, isa.VEC_ALIGN, pc, 0, False)
            if r != 0:
                state[S_EXIT_A] = pc
                return r
            continue
        st, paddr = translate(
            mem, own, state[S_PTBR], state[S_MODE], state[S_GSTATE],
            state[S_MEMSIZE], pc, ACC_FETCH,
        )
        if st == T_PAGEFAULT:
            r = deliver_trap(state, mem, own, isa.VEC_PAGEFAULT, pc, pc, True)
            if r != 0:
                state[S_EXIT_A] = pc
                return r
            continue
        if st == T_MONFAULT:
            state[S_EXIT_A] = paddr
            state[S_EXIT_B] = ACC_FETCH
            state[S_EXIT_C] = pc
            return EXIT_MONFAULT

        word = read32(mem, paddr)
        opcode = word >> 26
        if opcode > isa.IDLE:
            r = deliver_trap(state, mem, own, isa.VEC_ILLEGAL, pc, 0, False)
            if r != 0:
                state[S_EXIT_A] = pc
                return r
            continue
        if state[S_MODE] == 0 and (_PRIV_MASK >> opcode) & 1 != 0:
            r = deliver_trap(state, mem, own, isa.VEC_ILLEGAL, pc, 0, False)
            if r != 0:
                state[S_EXIT_A] = pc
                return r
            continue

        rd = (word >> 23) & 7
        rs = (word >> 20) & 7
        imm = word & 0xFFFF
        if imm & 0x8000:
            imm -= 0x10000

        next_pc = (pc + 4) & 0xFFFFFFFF
        deliver_vector = -1
        deliver_epc = 0

        if opcode == isa.NOP:
            pass
        elif opcode == isa.HALT:
            state[S_HALTED] = 1
            state[S_EXIT_A] = pc
            state[S_PC] = next_pc
            state[S_RETIRED] += 1
            state[S_CYC_TOTAL] += cpi
            state[S_STI_SHADOW] = 0
            return EXIT_HALT
        elif opcode == isa.MOVI:
            state[rd] = imm & 0xFFFFFFFF
        elif opcode == isa.MOV:
            state[rd] = state[rs]
        elif opcode == isa.ADD or opcode == isa.SUB or opcode == isa.AND \
                or opcode == isa.OR or opcode == isa.XOR or opcode == isa.SHL \
                or opcode == isa.SHR or opcode == isa.CMP:
            a = state[rd] & 0xFFFFFFFF
            b = state[rs] & 0xFFFFFFFF
            if opcode == isa.ADD:
                res = (a + b) & 0xFFFFFFFF
            elif opcode == isa.SUB or opcode == isa.CMP:
                res = (a - b) & 0xFFFFFFFF
            elif opcode == isa.AND:
                res = a & b
            elif opcode == isa.OR:
                res = a | b
            elif opcode == isa.XOR:
                res = a ^ b
            elif opcode == isa.SHL:
                res = (a << (b & 31)) & 0xFFFFFFFF
            else:
                res = a >> (b & 31)
            flags = state[S_FLAGS] & ~(isa.FLAG_Z | isa.FLAG_N)
            if res == 0:
                flags |= isa.FLAG_Z
            if res & 0x80000000:
                flags |= isa.FLAG_N
            state[S_FLAGS] = flags
            if opcode != isa.CMP:
                state[rd] = res
        elif opcode == isa.JMP:
            next_pc = (pc + 4 + imm * 4) & 0xFFFFFFFF
        elif opcode == isa.JZ:
            if state[S_FLAGS] & isa.FLAG_Z:
                next_pc = (pc + 4 + imm * 4) & 0xFFFFFFFF
        elif opcode == isa.JNZ:
            if state[S_FLAGS] & isa.FLAG_Z == 0:
                next_pc = (pc + 4 + imm * 4) & 0xFFFFFFFF
        elif opcode == isa.JLT:
            if state[S_FLAGS] & isa.FLAG_N:
                next_pc = (pc + 4 + imm * 4) & 0xFFFFFFFF
        elif opcode == isa.LOAD or opcode == isa.STORE:
            ea = (state[rs] + imm) & 0xFFFFFFFF
            if ea & 3 != 0:
                r = deliver_trap(state, mem, own, isa.VEC_ALIGN, pc, 0, False)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            acc = ACC_READ if opcode == isa.LOAD else ACC_WRITE
            st, paddr = translate(
                mem, own, state[S_PTBR], state[S_MODE], state[S_GSTATE],
                state[S_MEMSIZE], ea, acc,
            )
            if st == T_PAGEFAULT:
                r = deliver_trap(state, mem, own, isa.VEC_PAGEFAULT, pc, ea, True)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            if st == T_MONFAULT:
                state[S_EXIT_A] = paddr
                state[S_EXIT_B] = acc
                state[S_EXIT_C] = pc
                return EXIT_MONFAULT
            if opcode == isa.LOAD:
                state[rd] = read32(mem, paddr)
            else:
                val = state[rd] & 0xFFFFFFFF
                write32(mem, paddr, val)
                if tracing:
                    fold(trace, paddr)
                    fold(trace, val)
        elif opcode == isa.PUSH or opcode == isa.CALL:
            sp = (state[7] - 4) & 0xFFFFFFFF
            if sp & 3 != 0:
                r = deliver_trap(state, mem, own, isa.VEC_ALIGN, pc, 0, False)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            st, paddr = translate(
                mem, own, state[S_PTBR], state[S_MODE], state[S_GSTATE],
                state[S_MEMSIZE], sp, ACC_WRITE,
            )
            if st == T_PAGEFAULT:
                r = deliver_trap(state, mem, own, isa.VEC_PAGEFAULT, pc, sp, True)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            if st == T_MONFAULT:
                state[S_EXIT_A] = paddr
                state[S_EXIT_B] = ACC_WRITE
                state[S_EXIT_C] = pc
                return EXIT_MONFAULT
            val = (state[rd] & 0xFFFFFFFF) if opcode == isa.PUSH else next_pc
            write32(mem, paddr, val)
            if tracing:
                fold(trace, paddr)
                fold(trace, val)
            state[7] = sp
            if opcode == isa.CALL:
                next_pc = ((imm & 0xFFFF) * 4) & 0xFFFFFFFF
        elif opcode == isa.POP or opcode == isa.RET:
            sp = state[7] & 0xFFFFFFFF
            if sp & 3 != 0:
                r = deliver_trap(state, mem, own, isa.VEC_ALIGN, pc, 0, False)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            st, paddr = translate(
                mem, own, state[S_PTBR], state[S_MODE], state[S_GSTATE],
                state[S_MEMSIZE], sp, ACC_READ,
            )
            if st == T_PAGEFAULT:
                r = deliver_trap(state, mem, own, isa.VEC_PAGEFAULT, pc, sp, True)
                if r != 0:
                    state[S_EXIT_A] = pc
                    return r
                continue
            if st == T_MONFAULT:
                state[S_EXIT_A] = paddr
                state[S_EXIT_B] = ACC_READ
                state[S_EXIT_C] = pc
                return EXIT_MONFAULT
            val = read32(mem, paddr)
            state[7] = (sp + 4) & 0xFFFFFFFF
            if opcode == isa.POP:
                state[rd] = val
            else:
                next_pc = val & 0xFFFFFFFF
        elif opcode == isa.IN:
            state[S_EXIT_A] = imm & 0xFFFF
            state[S_EXIT_B] = rd
            return EXIT_PORT_IN
        elif opcode == isa.OUT:
            state[S_EXIT_A] = imm & 0xFFFF
            state[S_EXIT_B] = state[rd] & 0xFFFFFFFF
            return EXIT_PORT_OUT
        elif opcode == isa.SYSCALL:
            deliver_vector = isa.VEC_SYSCALL
            deliver_epc = next_pc
        elif opcode == isa.IRET:
            if rd == 1:
                # iretu: privileged entry to USER mode at the rs register.
                next_pc = state[rs] & 0xFFFFFFFF
                state[S_MODE] = 0
                state[S_INFAULT] = 0
            else:
                next_pc = state[S_EPC] & 0xFFFFFFFF
                state[S_FLAGS] = state[S_EFLAGS]
                state[S_MODE] = state[S_EMODE]
                state[S_INFAULT] = 0
            # Like STI, IRET re-enables delivery with a one-instruction
            # shadow; without it a handler slower than the interrupt
            # period livelocks the interrupted code.
            state[S_STI_SHADOW] = 1
        elif opcode == isa.BRK:
            if state[S_INTERCEPT_DEBUG] != 0:
                state[S_EXIT_A] = pc
                return EXIT_BREAK
            deliver_vector = isa.VEC_BRK
            deliver_epc = next_pc
        elif opcode == isa.LPTBR:
            state[S_PTBR] = state[rd] & 0xFFFFFFFF
        elif opcode == isa.LIVT:
            state[S_IVT] = state[rd] & 0xFFFFFFFF
        elif opcode == isa.STI:
            state[S_FLAGS] = state[S_FLAGS] | isa.FLAG_I
            state[S_STI_SHADOW] = 1
        elif opcode == isa.CLI:
            state[S_FLAGS] = state[S_FLAGS] & ~isa.FLAG_I
        elif opcode == isa.SETTF:
            state[S_TF] = imm & 1
        elif opcode == isa.IDLE:
            # Park until the caller wakes us: charge idle cycles in bulk.
            state[S_IDLE_PARKED] = 1
            n = state[S_STOP_CYCLE] - state[S_CYC_TOTAL]
            if n > 0:
                state[S_CYC_TOTAL] += n
                state[S_CYC_IDLE] += n
            return EXIT_STOP

        # retire
        state[S_PC] = next_pc
        state[S_RETIRED] += 1
        state[S_CYC_TOTAL] += cpi
        if opcode != isa.STI and opcode != isa.IRET:
            state[S_STI_SHADOW] = 0
        if tracing:
            fold(trace, state[S_PC])
            fold(trace, state[0])
            fold(trace, state[1])
            fold(trace, state[2])
            fold(trace, state[3])
            fold(trace, state[4])
            fold(trace, state[5])
            fold(trace, state[6])
            fold(trace, state[7])
            fold(trace, state[S_FLAGS] | (state[S_MODE] << 8))

        if deliver_vector >= 0:
            r = deliver_trap(state, mem, own, deliver_vector, deliver_epc, 0, False)
            if r != 0:
                state[S_EXIT_A] = pc
                return r

        if state[S_TF] != 0 and state[S_INTERCEPT_DEBUG] != 0:
            state[S_TF] = 0
            state[S_EXIT_A] = state[S_PC]
            return EXIT_STEP

        if opcode == isa.STI or opcode == isa.IRET:
            # The caller must re-evaluate IRQ deliverability: a pending
            # line may have just become deliverable.
            return EXIT_RESCHED
