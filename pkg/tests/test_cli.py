"""Workload-runner tests: report schema, seeding, exit codes, flag plumbing."""
import json

import numpy as np
import pytest

from smegemm.cli import (WORKLOADS, main, oracle_check, random_inputs,
                         scaled_shape)
from smegemm.memsim import SystemProfile


def test_workload_table_complete():
    assert sorted(WORKLOADS) == list(range(1, 25))
    assert WORKLOADS[1] == (64, 2112, 7168)
    assert WORKLOADS[19] == (4096, 256, 4096)
    assert WORKLOADS[24] == (5120, 256, 13824)


def test_scaled_shape():
    assert scaled_shape(WORKLOADS[1], 16) == (4, 132, 448)
    assert scaled_shape((5, 5, 5), 16) == (1, 1, 1)
    assert scaled_shape((64, 100, 7), 1) == (64, 100, 7)


def test_run_single_workload(tmp_path, capsys):
    rc = main(["--workload", "1", "--scale", "64", "--out-dir",
               str(tmp_path), "--seed", "3"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "1/1 passed" in out
    rep = json.loads((tmp_path / "workload1_f32_row.json").read_text())
    assert rep["verdict"] == "pass"
    assert (rep["m"], rep["n"], rep["k"]) == (1, 33, 112)
    for key in ("tiling", "instr", "mem_total", "wall_time_s",
                "footprint_ok", "edge_kernel_calls"):
        assert key in rep


def test_unknown_workload(tmp_path):
    with pytest.raises(SystemExit):
        main(["--workload", "99", "--out-dir", str(tmp_path)])


def test_shape_flag_and_dtypes(tmp_path, capsys):
    for dtype in ("f32", "i8", "f16"):
        rc = main(["--shape", "40x70x60", "--dtype", dtype, "--beta", "1",
                   "--out-dir", str(tmp_path)])
        assert rc == 0
    assert main(["--shape", "33x33x33", "--layout", "col",
                 "--out-dir", str(tmp_path)]) == 0


def test_seeded_determinism(tmp_path):
    argv = ["--shape", "48x96x32", "--seed", "11", "--out-dir"]
    main(argv + [str(tmp_path / "a")])
    main(argv + [str(tmp_path / "b")])
    ra = json.loads((tmp_path / "a" / "shape_48x96x32_f32.json").read_text())
    rb = json.loads((tmp_path / "b" / "shape_48x96x32_f32.json").read_text())
    ra.pop("wall_time_s")
    rb.pop("wall_time_s")
    assert ra == rb


def test_ablation_mode(tmp_path, capsys):
    rc = main(["--ablate", "--shape", "64x80x48", "--out-dir", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "baseline" in out and "+online-pack" in out
    assert "4/4 passed" in out
    assert (tmp_path / "ablation_baseline.json").exists()


def test_profile_file_flag(tmp_path, capsys):
    prof = SystemProfile(l2_capacity_bytes=1 << 20, working_set_bytes=1 << 20,
                         tlb_entries=64, page_bytes=4096)
    pf = tmp_path / "prof.json"
    prof.to_file(pf)
    rc = main(["--shape", "32x64x32", "--profile", str(pf),
               "--out-dir", str(tmp_path)])
    assert rc == 0


def test_explain_tiling(capsys):
    rc = main(["--explain-tiling"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "CMR" in out and "TLB" in out


def test_units_flag(tmp_path, capsys):
    rc = main(["--shape", "64x128x32", "--units", "2",
               "--out-dir", str(tmp_path)])
    assert rc == 0


def test_oracle_check_rejects_wrong_result(rng):
    a, b, c0 = (x.astype(np.float32) for x in
                (rng.uniform(-1, 1, (8, 8)), rng.uniform(-1, 1, (8, 8)),
                 np.zeros((8, 8))))
    good = a.astype(np.float64) @ b.astype(np.float64)
    ok, _ = oracle_check(a, b, c0, good.astype(np.float32), 1.0, 0.0, "f32")
    assert ok
    bad = good.astype(np.float32)
    bad[3, 3] += 0.5
    ok, err = oracle_check(a, b, c0, bad, 1.0, 0.0, "f32")
    assert not ok and err > 0


def test_random_inputs_seeded():
    a1, b1, c1 = random_inputs(10, 10, 10, "i8", 42, 1.0)
    a2, b2, c2 = random_inputs(10, 10, 10, "i8", 42, 1.0)
    assert np.array_equal(a1, a2) and np.array_equal(c1, c2)
    a3, _, _ = random_inputs(10, 10, 10, "i8", 43, 1.0)
    assert not np.array_equal(a1, a3)
