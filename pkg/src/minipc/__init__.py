"""MiniPC-32: a deterministic whole-machine simulator with a lightweight
virtual machine monitor, a crash-proof remote debug stub, and an I/O
virtualization-overhead benchmark."""

from .asm import AsmErrors, assemble, disassemble_range, disassemble_word
from .bench import BenchConfig, BenchReport, RateSweep, calibrate, default_cost, run_sweep
from .image import Image, LoadError
from .isa import Instruction, decode, encode
from .machine import CostModel, Machine
from .monitor import MonitorCtx, MonitorMode, boot_monitored, guest_loop, init_monitor
from .workload import XferParams, boot_xfer, verify_transfer

__all__ = [
    "AsmErrors", "assemble", "disassemble_range", "disassemble_word",
    "BenchConfig", "BenchReport", "RateSweep", "calibrate", "default_cost",
    "run_sweep", "Image", "LoadError", "Instruction", "decode", "encode",
    "CostModel", "Machine", "MonitorCtx", "MonitorMode", "boot_monitored",
    "guest_loop", "init_monitor", "XferParams", "boot_xfer", "verify_transfer",
]
