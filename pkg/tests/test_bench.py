import json
import subprocess
import sys

import pytest

from minipc.bench import (
    BenchConfig, RateSweep, Sample, build_report, calibrate, default_cost,
    emit_csv, measure_load, run_sample, run_sweep,
)
from minipc.machine import CostModel
from minipc.monitor import MonitorMode
from minipc.workload import XferParams


def test_measure_load_examples():
    assert measure_load(10_000_000, 5_000_000) == 50.0
    assert measure_load(100, 100) == 0.0
    with pytest.raises(ValueError):
        measure_load(0, 0)


def test_rate_sweep_parse():
    s = RateSweep.parse("50:1000:50")
    assert s.rates()[:3] == [50, 100, 150]
    assert len(s.rates()) == 20
    with pytest.raises(ValueError):
        RateSweep.parse("50:10:50")
    with pytest.raises(ValueError):
        RateSweep.parse("nonsense")


@pytest.fixture(scope="module")
def small_report():
    cfg = BenchConfig(sweep=RateSweep(200, 800, 300), cost=default_cost())
    return run_sweep(cfg)


def test_sweep_cardinality(small_report):
    assert len(small_report.samples) == 3 * 3   # modes x rates
    assert small_report.all_valid


def test_load_monotone_in_rate_within_mode(small_report):
    for mode in ("bare", "lightweight", "fullvirt"):
        loads = [s.cpu_load_pct for s in small_report.samples if s.mode == mode]
        assert loads == sorted(loads)


def test_mode_ordering_at_equal_rate(small_report):
    by_rate = {}
    for s in small_report.samples:
        by_rate.setdefault(s.target_mbps, {})[s.mode] = s.cpu_load_pct
    for rate, loads in by_rate.items():
        assert loads["bare"] < loads["lightweight"] < loads["fullvirt"]


def test_fullvirt_load_at_least_lightweight(small_report):
    by_rate = {}
    for s in small_report.samples:
        by_rate.setdefault(s.target_mbps, {})[s.mode] = s.cpu_load_pct
    for loads in by_rate.values():
        assert loads["fullvirt"] >= loads["lightweight"]


def test_achieved_never_exceeds_target(small_report):
    for s in small_report.samples:
        assert s.achieved_mbps <= s.target_mbps * 1.01


def test_csv_deterministic_and_ordered(tmp_path, small_report):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(small_report, p1)
    emit_csv(small_report, p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == ("mode,target_mbps,achieved_mbps,cpu_load_pct,"
                        "exits_io,exits_irq,cycles_total,cycles_idle,cycles_monitor")
    modes = [ln.split(",")[0] for ln in lines[1:]]
    assert modes == sorted(modes, key=["bare", "lightweight", "fullvirt"].index)


def test_empty_report_header_only(tmp_path):
    emit_csv(build_report([]), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().strip() == (
        "mode,target_mbps,achieved_mbps,cpu_load_pct,"
        "exits_io,exits_irq,cycles_total,cycles_idle,cycles_monitor")


def test_rerun_bit_identical(tmp_path):
    cfg = BenchConfig(modes=[MonitorMode.LIGHTWEIGHT],
                      sweep=RateSweep(400, 400, 50), cost=default_cost())
    emit_csv(run_sweep(cfg), tmp_path / "r1.csv")
    emit_csv(run_sweep(cfg), tmp_path / "r2.csv")
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_ratio_direction_under_any_positive_costs():
    # max_rate(lw) > max_rate(fv) and < max_rate(bare) whenever
    # world_switch > 0 and emulate_port > 0
    sweep = RateSweep(50, 1000, 50)
    for scale in (1.0, 1.5):
        base = default_cost()
        cost = CostModel(world_switch=int(base.world_switch * scale),
                         emulate_port=int(base.emulate_port * scale),
                         dma_copy_per_byte=base.dma_copy_per_byte)
        cfg = BenchConfig(sweep=sweep, cost=cost)
        from minipc.bench import _max_rate_probe
        from minipc.workload import program_image
        image = program_image("xfer")
        rates = sweep.rates()
        mb = _max_rate_probe(MonitorMode.BARE, cost, rates, image, cfg)
        ml = _max_rate_probe(MonitorMode.LIGHTWEIGHT, cost, rates, image, cfg)
        mf = _max_rate_probe(MonitorMode.FULLVIRT, cost, rates, image, cfg)
        assert mf is not None and ml is not None and mb is not None
        assert mf < ml < mb


def test_reassembly_mismatch_fails_loudly():
    from minipc.monitor import guest_loop
    from minipc.workload import IntegrityError, boot_xfer, verify_transfer
    params = XferParams(rate_mbps=600)
    ctx = boot_xfer(MonitorMode.BARE, CostModel(), params)
    guest_loop(ctx, max_cycles=20 * params.ideal_cycles, poll_cycles=None)
    log = ctx.machine.devices.nic.tx_log
    tampered = bytearray(log[0])
    tampered[100] ^= 0xFF
    log[0] = bytes(tampered)
    with pytest.raises(IntegrityError):
        verify_transfer(ctx, params)


def test_missing_datagram_fails_loudly():
    from minipc.monitor import guest_loop
    from minipc.workload import IntegrityError, boot_xfer, verify_transfer
    params = XferParams(rate_mbps=600)
    ctx = boot_xfer(MonitorMode.BARE, CostModel(), params)
    guest_loop(ctx, max_cycles=20 * params.ideal_cycles, poll_cycles=None)
    ctx.machine.devices.nic.tx_log.pop()
    with pytest.raises(IntegrityError):
        verify_transfer(ctx, params)


def test_calibrate_small_grid_terminates(tmp_path):
    cost, summary = calibrate(grid=[(150_000, 70_000, 5)],
                              sweep=RateSweep(50, 1000, 50))
    assert cost.world_switch == 150_000
    assert summary["max_rate_lightweight"] is not None
    r_full = summary["ratio_lightweight_fullvirt"]
    r_bare = summary["ratio_lightweight_bare"]
    assert 4.0 <= r_full <= 7.0
    assert 0.18 <= r_bare <= 0.35
