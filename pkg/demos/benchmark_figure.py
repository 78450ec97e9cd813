"""Reproduce the load-vs-rate comparison at reduced resolution and sketch
the curves as ASCII art: bare metal vs the lightweight monitor vs full
virtualization.

Run:  python3 demos/benchmark_figure.py        (about half a minute)
"""

from minipc.bench import BenchConfig, RateSweep, default_cost, run_sweep

cfg = BenchConfig(sweep=RateSweep(50, 1000, 50), cost=default_cost())
report = run_sweep(cfg)

by_mode = {}
for s in report.samples:
    by_mode.setdefault(s.mode, []).append(s)

print(f"{'rate':>6} | {'bare':>6} {'light':>6} {'full':>6}   (cpu load %)")
rates = sorted({s.target_mbps for s in report.samples})
for rate in rates:
    row = {s.mode: s for s in report.samples if s.target_mbps == rate}
    print(f"{rate:6g} | {row['bare'].cpu_load_pct:6.1f} "
          f"{row['lightweight'].cpu_load_pct:6.1f} "
          f"{row['fullvirt'].cpu_load_pct:6.1f}")

print("\nload curves (b under l under f; each column = one swept rate):")
for thresh in range(100, 0, -10):
    line = ""
    for rate in rates:
        row = {s.mode: s for s in report.samples if s.target_mbps == rate}
        cell = "."
        # lowest curve still reaching this threshold wins the cell
        for mode, mark in (("bare", "b"), ("lightweight", "l"), ("fullvirt", "f")):
            if row[mode].cpu_load_pct >= thresh:
                cell = mark
                break
        line += cell
    print(f"{thresh:3d}% |{line}")
print("      " + "".join("^" if r % 200 == 0 else " " for r in rates)
      + "   (^ = 200 Mbit/s gridlines)")

print("\nmax sustainable rates:", report.max_rate)
if report.ratio_lightweight_fullvirt is not None:
    print(f"lightweight vs fullvirt: {report.ratio_lightweight_fullvirt:.1f}x faster")
if report.ratio_lightweight_bare is not None:
    print(f"lightweight vs bare:     {report.ratio_lightweight_bare:.0%} of bare throughput")
