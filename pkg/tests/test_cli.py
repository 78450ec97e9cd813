import json

import pytest

from minipc.cli import main
from minipc.image import Image


SRC = """.org 0x100
start:
  movi r1, 7
  movi r2, 3
  add r1, r2
  halt
"""


def test_asm_disasm_run_roundtrip(tmp_path, capsys):
    src = tmp_path / "prog.masm"
    img_path = tmp_path / "prog.img"
    src.write_text(SRC)
    assert main(["asm", str(src), "-o", str(img_path)]) == 0
    img = Image.load(img_path)
    assert img.entry == 0x100

    assert main(["disasm", str(img_path)]) == 0
    out = capsys.readouterr().out
    assert "movi r1, 7" in out and "halt" in out

    assert main(["run", str(img_path), "--mode", "bare"]) == 0
    out = capsys.readouterr().out
    assert "state=shutdown" in out


def test_asm_errors_exit_nonzero(tmp_path, capsys):
    src = tmp_path / "bad.masm"
    src.write_text(".org 0\nbogus r1\n")
    assert main(["asm", str(src), "-o", str(tmp_path / "x.img")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_run_with_config(tmp_path, capsys):
    src = tmp_path / "p.masm"
    src.write_text(SRC)
    img_path = tmp_path / "p.img"
    main(["asm", str(src), "-o", str(img_path)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "mode": "lightweight",
        "cost": {"world_switch": 10, "emulate_port": 2, "clock_hz": 1000000},
        "mem_mib": 8,
    }))
    assert main(["run", str(img_path), "--config", str(cfg)]) == 0
    assert "state=shutdown" in capsys.readouterr().out


def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--modes", "bare,lightweight", "--rates", "400:800:400",
               "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 2 * 2
    assert lines[0].startswith("mode,target_mbps")


def test_bench_gdb_requires_vmm_mode(tmp_path, capsys):
    src = tmp_path / "p.masm"
    src.write_text(SRC)
    img_path = tmp_path / "p.img"
    main(["asm", str(src), "-o", str(img_path)])
    rc = main(["run", str(img_path), "--mode", "bare", "--gdb", "0"])
    assert rc == 1
