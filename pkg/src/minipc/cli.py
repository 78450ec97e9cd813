"""Command-line entry point.

    minipc asm <in.masm> -o <out.img>
    minipc disasm <image>
    minipc run <image> --mode MODE [--config cfg.json] [--gdb PORT]
               [--ws PORT] [--trace] [--max-cycles N]
    minipc bench [--modes a,b,c] [--rates start:stop:step] [--total-mib N]
                 [--segment-kib N] [--config cfg.json] --out out.csv
    minipc calibrate [--target-ratio-full X] [--target-frac-bare Y] --out cfg.json
"""

from __future__ import annotations

import argparse
import json
import sys

from . import asm as masm
from .bench import (
    BenchConfig, RateSweep, calibrate, cost_to_config_dict, default_cost,
    emit_csv, run_sweep,
)
from .image import Image
from .machine import CostModel, Machine
from .monitor import (
    MonitorMode, boot_monitored, cost_from_dict, guest_loop, init_monitor,
    load_config,
)


def _cmd_asm(args) -> int:
    with open(args.source) as f:
        src = f.read()
    try:
        img = masm.assemble(src)
    except masm.AsmErrors as e:
        for err in e.errors:
            print(f"{args.source}:{err}", file=sys.stderr)
        return 1
    img.save(args.output)
    total = sum(len(d) for _, d in img.sections)
    print(f"{args.output}: entry {img.entry:#x}, "
          f"{len(img.sections)} section(s), {total} bytes")
    return 0


def _cmd_disasm(args) -> int:
    img = Image.load(args.image)
    print(f"; entry {img.entry:#x}")
    for addr, data in img.sections:
        print(f"; section {addr:#x} +{len(data)}")
        for a, line in masm.disassemble_range(data, addr):
            print(f"{a:08x}:  {line}")
    return 0


def _load_cfg(args):
    if args.config:
        mode, cost, mem_mib = load_config(args.config)
    else:
        cost, mem_mib = default_cost(), 16
        mode = MonitorMode.LIGHTWEIGHT
    if getattr(args, "mode", None):
        mode = MonitorMode(args.mode)
    return mode, cost, mem_mib


def _cmd_run(args) -> int:
    mode, cost, mem_mib = _load_cfg(args)
    img = Image.load(args.image)
    ctx = boot_monitored(img, mode, cost, mem_mib=mem_mib)
    if args.workload_rate:
        # arm the transfer workload: seeded disks + boot parameter block
        from .workload import XferParams, poke_params, seed_disks
        params = XferParams(rate_mbps=args.workload_rate, clock_hz=cost.clock_hz)
        seed_disks(ctx.machine, params)
        poke_params(ctx.machine, params)
    if args.trace:
        ctx.machine.set_trace(True)
    servers = []
    if args.gdb is not None or args.ws is not None:
        if mode is MonitorMode.BARE:
            print("debug servers need a VMM mode (lightweight/fullvirt)",
                  file=sys.stderr)
            return 1
        from .rsp import DebugSession, RspServer
        session = DebugSession(ctx)
        if args.gdb is not None:
            servers.append(RspServer(session, port=args.gdb))
        if args.ws is not None:
            from .wsbridge import WsBridge
            servers.append(WsBridge(session, port=args.ws,
                                    static_dir=args.console_dir))
        for srv in servers:
            srv.start()
            print(f"listening: {srv.describe()}")
    stats = guest_loop(ctx, max_cycles=args.max_cycles)
    m = ctx.machine
    print(f"guest stopped: state={ctx.run_state.value} pc={m.pc:#x} "
          f"cycles={m.cycles_total} retired={m.retired}")
    print(f"exits: io={stats.trapped_io} irq={stats.irq_intercepts} "
          f"faults={stats.monitor_faults} world_switches={stats.world_switches}")
    if args.trace:
        print(f"trace digest: {m.trace_digest():#018x}")
    for srv in servers:
        srv.stop()
    return 0


def _cmd_bench(args) -> int:
    if args.config:
        _, cost, mem_mib = load_config(args.config)
    else:
        cost, mem_mib = default_cost(), 16
    modes = [MonitorMode(m) for m in args.modes.split(",")]
    cfg = BenchConfig(
        modes=modes,
        sweep=RateSweep.parse(args.rates),
        total_bytes=args.total_mib * 1024 * 1024,
        segment_bytes=args.segment_kib * 1024,
        cost=cost,
        mem_mib=mem_mib,
    )
    report = run_sweep(cfg)
    emit_csv(report, args.out)
    print(f"wrote {args.out} ({len(report.samples)} samples)")
    for mode, rate in sorted(report.max_rate.items()):
        print(f"max sustainable rate [{mode}]: "
              f"{'none' if rate is None else f'{rate:g} Mbit/s'}")
    if report.ratio_lightweight_fullvirt is not None:
        print(f"lightweight/fullvirt: {report.ratio_lightweight_fullvirt:.2f}x")
    if report.ratio_lightweight_bare is not None:
        print(f"lightweight/bare: {report.ratio_lightweight_bare:.2%}")
    if not report.all_valid:
        for s in report.samples:
            if not s.valid:
                print(f"INVALID sample {s.mode}@{s.target_mbps:g}: {s.error}",
                      file=sys.stderr)
        return 1
    return 0


def _cmd_calibrate(args) -> int:
    cost, summary = calibrate(
        target_ratio_full=args.target_ratio_full,
        target_frac_bare=args.target_frac_bare,
        progress=(print if args.verbose else None),
    )
    with open(args.out, "w") as f:
        json.dump(cost_to_config_dict(cost), f, indent=2)
        f.write("\n")
    print(f"wrote {args.out}")
    for k, v in summary.items():
        print(f"  {k}: {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minipc",
                                description="MiniPC-32 simulator and VMM benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("asm", help="assemble a .masm source into an MPC1 image")
    pa.add_argument("source")
    pa.add_argument("-o", "--output", required=True)
    pa.set_defaults(fn=_cmd_asm)

    pd = sub.add_parser("disasm", help="disassemble an MPC1 image")
    pd.add_argument("image")
    pd.set_defaults(fn=_cmd_disasm)

    pr = sub.add_parser("run", help="run an image under a monitor mode")
    pr.add_argument("image")
    pr.add_argument("--mode", choices=[m.value for m in MonitorMode])
    pr.add_argument("--config")
    pr.add_argument("--gdb", type=int, default=None, metavar="PORT")
    pr.add_argument("--ws", type=int, default=None, metavar="PORT")
    pr.add_argument("--console-dir", default=None,
                    help="static files served next to the WebSocket bridge")
    pr.add_argument("--trace", action="store_true")
    pr.add_argument("--max-cycles", type=int, default=None)
    pr.add_argument("--workload-rate", type=float, default=None, metavar="MBPS",
                    help="seed the disks and poke the transfer workload's "
                         "parameter block for this target rate")
    pr.set_defaults(fn=_cmd_run)

    pb = sub.add_parser("bench", help="run the load-vs-rate sweep")
    pb.add_argument("--modes", default="bare,lightweight,fullvirt")
    pb.add_argument("--rates", default="50:1000:50")
    pb.add_argument("--total-mib", type=int, default=2)
    pb.add_argument("--segment-kib", type=int, default=1024)
    pb.add_argument("--config")
    pb.add_argument("--out", required=True)
    pb.set_defaults(fn=_cmd_bench)

    pc = sub.add_parser("calibrate", help="search cost knobs for the target ratios")
    pc.add_argument("--target-ratio-full", type=float, default=5.4)
    pc.add_argument("--target-frac-bare", type=float, default=0.26)
    pc.add_argument("--out", required=True)
    pc.add_argument("--verbose", action="store_true")
    pc.set_defaults(fn=_cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
