"""Acceptance suite.

One test per criterion; each prints a PASS/FAIL line (visible with -s).
Tolerances are fixed here: i8 exact, f32 within 1e-5 and f16 within 1e-2
scaled elementwise error against the float64 reference, and f32/f16 bit-exact
against the same-order scalar replay.
"""
import time

import numpy as np

from oracles import naive_check, random_inputs, reference_gemm_sameorder
from smegemm.cli import IRREGULAR_MN, WORKLOADS, scaled_shape
from smegemm.driver import GemmConfig, gemm_on_arrays
from smegemm.machine import MachineConfig, MachineState, TileView, whilelt
from smegemm.memsim import SystemProfile
from smegemm.tiling import (HardwareProfile, TilingParams, budget_lhs_elems,
                            cmr, plan, solve_kc, tlb_ok, validate)

GRID = (1, 15, 16, 17, 63, 64, 65, 100)
DTYPES = ("f32", "f16", "i8")


def _report(num, name, ok, extra=""):
    print(f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} {extra}")
    assert ok, f"criterion {num} failed: {name} {extra}"


def _run_and_check(rng, M, N, K, dtype, layout, beta, profile=None,
                   units=1) -> tuple[bool, str]:
    a, b, c0 = random_inputs(rng, M, N, K, dtype, beta)
    cfg = GemmConfig(dtype=dtype, layout=layout, beta=beta, unit_count=units)
    out, rep = gemm_on_arrays(a, b, c0, cfg, profile)
    ok, err = naive_check(a, b, c0, out, 1.0, beta, dtype)
    if not ok:
        return False, f"{M}x{N}x{K} {dtype} {layout} beta={beta} err={err}"
    ref = reference_gemm_sameorder(a, b, c0, 1.0, beta, rep.tiling["kc"],
                                   rep.tiling["k_unit"], dtype)
    if not np.array_equal(out.view(np.uint8), ref.view(np.uint8)):
        return False, f"{M}x{N}x{K} {dtype} {layout} beta={beta}: " \
                      f"not bit-equal to same-order reference"
    return True, ""


def test_criterion_1_oracle_grid():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    n_runs = 0
    for dtype in DTYPES:
        for layout in ("row", "col"):
            for beta in (0.0, 1.0):
                for M in GRID:
                    for N in GRID:
                        for K in GRID:
                            ok, msg = _run_and_check(rng, M, N, K, dtype,
                                                     layout, beta)
                            if not ok:
                                _report(1, "oracle equivalence grid", False, msg)
                            n_runs += 1
    dt = time.time() - t0
    _report(1, "oracle equivalence grid", dt < 300,
            f"[{n_runs} runs in {dt:.1f}s]")


def test_criterion_2_workload_suite():
    t0 = time.time()
    rng = np.random.default_rng(77)
    reports = []
    for dtype in ("f32", "i8"):
        for wid in sorted(WORKLOADS):
            M, N, K = scaled_shape(WORKLOADS[wid], 16)
            beta = 1.0 if wid % 2 else 0.0
            ok, msg = _run_and_check(rng, M, N, K, dtype, "row", beta)
            if not ok:
                _report(2, "workload suite /16", False, f"id={wid} {msg}")
            reports.append((wid, dtype))
    dt = time.time() - t0
    _report(2, "workload suite /16", len(reports) == 48 and dt < 600,
            f"[48 runs in {dt:.1f}s]")


def test_criterion_3_irregular_sweep():
    rng = np.random.default_rng(55)
    K = 2560
    cells = 0
    for M in IRREGULAR_MN:
        for N in IRREGULAR_MN:
            a, b, c0 = random_inputs(rng, M, N, K, "f32", 0.0)
            out, rep = gemm_on_arrays(a, b, c0, GemmConfig())
            ok, err = naive_check(a, b, c0, out, 1.0, 0.0, "f32")
            if not (ok and rep.edge_kernel_calls > 0):
                _report(3, "irregular sweep", False,
                        f"{M}x{N}: ok={ok} edges={rep.edge_kernel_calls}")
            cells += 1
    _report(3, "irregular sweep", cells == 25, f"[{cells}/25 cells]")


def test_criterion_4_tiling_planner():
    ok = True
    notes = []
    # planner output satisfies both constraints verbatim, all dtypes/layouts
    for dtype in ("f32", "f64", "f16", "i8"):
        for layout in ("row", "col"):
            hw = HardwareProfile.from_system(SystemProfile(), dtype)
            bad = validate(plan(hw, layout), hw)
            if bad:
                ok = False
                notes.append(f"{dtype}/{layout}: {bad}")
    # small budgets: exhaustive grid search finds nothing strictly better
    for budget in (256 << 10, 512 << 10, 1 << 20):
        hw = HardwareProfile(l2_budget_bytes=budget, tlb_entries=64,
                             page_bytes=4096)
        params = plan(hw)
        best = cmr(params.mc, params.nc, params.kc)
        mr, nr, kc = params.mr, params.nr, params.kc
        mc = mr
        while budget_lhs_elems(mc, nr, kc) < hw.budget_elems:
            nc = nr
            while budget_lhs_elems(mc, nc, kc) < hw.budget_elems:
                if cmr(mc, nc, kc) > best + 1e-12:
                    ok = False
                    notes.append(f"budget {budget}: ({mc},{nc}) beats planner")
                nc += nr
            mc += mr
        # kc one unit higher violates the TLB bound
        kc_solved = solve_kc(hw, mr, nr)
        if tlb_ok(hw, mr, nr, kc_solved + params.k_unit):
            ok = False
            notes.append(f"budget {budget}: kc+k_unit still TLB-feasible")
    _report(4, "tiling planner", ok, "; ".join(notes))


def test_criterion_5_guideline_counters():
    rng = np.random.default_rng(99)
    ok = True
    notes = []
    for M, N, K, dtype in ((128, 256, 96, "f32"), (80, 200, 64, "f32"),
                           (64, 128, 128, "f16"), (64, 128, 256, "i8"),
                           (256, 448, 1024, "f32")):
        a, b, c0 = random_inputs(rng, M, N, K, dtype, 0.0)
        _, rep = gemm_on_arrays(a, b, c0, GemmConfig(dtype=dtype))
        if rep.tile_touch_violations != 0:
            ok = False
            notes.append(f"{M}x{N}x{K} {dtype}: tile violations")
        if rep.interior_calls and rep.interior_loads_g12 != 0:
            ok = False
            notes.append(f"{M}x{N}x{K} {dtype}: non-4-register interior loads")
        if not rep.footprint_ok:
            ok = False
            notes.append(f"{M}x{N}x{K} {dtype}: footprint {rep.footprint_bytes}"
                         f" >= {rep.footprint_limit}")
    _report(5, "guideline counters", ok, "; ".join(notes))


def test_criterion_6_cache_proxy():
    rng = np.random.default_rng(31)
    M = N = K = 768
    a, b, c0 = random_inputs(rng, M, N, K, "f32", 0.0)
    prof = SystemProfile(l2_capacity_bytes=1 << 20, working_set_bytes=1 << 20,
                         tlb_entries=64, page_bytes=4096)
    out1, rep1 = gemm_on_arrays(a, b, c0, GemmConfig(), prof)
    out2, rep2 = gemm_on_arrays(a, b, c0, GemmConfig(blocking_on=False), prof)
    same_bits = out1.tobytes() == out2.tobytes()
    fewer_l2 = rep1.mem_total["l2_misses"] < rep2.mem_total["l2_misses"]
    fewer_tlb = rep1.mem_total["tlb_misses"] < rep2.mem_total["tlb_misses"]
    _report(6, "cache proxy 768^3 @ 1MB", same_bits and fewer_l2 and fewer_tlb,
            f"[l2 {rep1.mem_total['l2_misses']} < {rep2.mem_total['l2_misses']}, "
            f"tlb {rep1.mem_total['tlb_misses']} < {rep2.mem_total['tlb_misses']}, "
            f"bits equal: {same_bits}]")


def test_criterion_7_isa_micro_suite():
    rng = np.random.default_rng(13)
    m = MachineState(MachineConfig())
    cases = 1000
    zf32 = m.reg_view("f32")
    # fmopa f32: bit-exact against the scalar outer-product reference
    ref = np.zeros((16, 16), np.float32)
    tile = TileView(32, 0)
    m.zero_za([tile])
    for i in range(cases):
        a = rng.uniform(-2, 2, 16).astype(np.float32)
        b = rng.uniform(-2, 2, 16).astype(np.float32)
        ra = int(rng.integers(1, 17))
        rb = int(rng.integers(1, 17))
        zf32[0], zf32[1] = a, b
        m.fmopa(tile, 0, 1, whilelt(0, ra, 32), whilelt(0, rb, 32))
        ref[:ra, :rb] += a[:ra, None] * b[None, :rb]
    assert np.array_equal(m._tiles_f32[0], ref)
    assert m.stats.flops == cases * 2 * (512 // 32) ** 2  # 512 per fmopa

    # fmopa f16 widening
    m.zero_za([tile])
    ref = np.zeros((16, 16), np.float32)
    for i in range(cases):
        a = rng.uniform(-1, 1, 32).astype(np.float16)
        b = rng.uniform(-1, 1, 32).astype(np.float16)
        m.reg_view("f16")[0], m.reg_view("f16")[1] = a, b
        m.fmopa(tile, 0, 1, precision="f16widen")
        a32, b32 = a.astype(np.float32), b.astype(np.float32)
        d = a32[0::2][:, None] * b32[0::2][None, :]
        d += a32[1::2][:, None] * b32[1::2][None, :]
        ref += d
    assert np.array_equal(m._tiles_f32[0], ref)

    # smopa i8: exact against the 16x4 . 4x16 integer product, with wrap
    m.zero_za([tile])
    ref64 = np.zeros((16, 16), np.int64)
    for i in range(cases):
        a = rng.integers(-128, 128, 64, dtype=np.int8)
        b = rng.integers(-128, 128, 64, dtype=np.int8)
        m.reg_view("i8")[0], m.reg_view("i8")[1] = a, b
        m.smopa(tile, 0, 1)
        ref64 += a.astype(np.int64).reshape(16, 4) @ \
            b.astype(np.int64).reshape(16, 4).T
    assert np.array_equal(m._tiles_i32[0],
                          (ref64 & 0xFFFFFFFF).astype(np.uint32).view(np.int32))

    # zip: index-formula oracle at 16-bit lanes
    for i in range(cases):
        a = rng.integers(0, 1 << 16, 32).astype(np.uint16)
        b = rng.integers(0, 1 << 16, 32).astype(np.uint16)
        m.reg_view("u16")[0], m.reg_view("u16")[1] = a, b
        m.zip_regs(0, 1, 16, 2, 3)
        lo, hi = m.reg_view("u16")[2], m.reg_view("u16")[3]
        assert np.array_equal(lo[0::2], a[:16]) and np.array_equal(lo[1::2], b[:16])
        assert np.array_equal(hi[0::2], a[16:]) and np.array_equal(hi[1::2], b[16:])

    # mova: vertical reads equal the transpose of what rows wrote
    for i in range(cases // 4):
        data = rng.uniform(-1, 1, (16, 16)).astype(np.float32)
        for r in range(16):
            zf32[4] = data[r]
            m.mova("regs_to_tile", tile, r, "horizontal", 4)
        j = int(rng.integers(0, 16))
        m.mova("tile_to_regs", tile, j, "vertical", 5)
        assert np.array_equal(zf32[5], data[:, j])

    # whilelt: count semantics over the lane range
    for i in range(cases):
        s = int(rng.integers(0, 40))
        e = int(rng.integers(0, 40))
        p = whilelt(s, e, 32)
        assert p.count == max(0, e - s)
    _report(7, "isa micro-suite", True, f"[{cases} cases per op]")


def test_criterion_8_parallel_determinism():
    rng = np.random.default_rng(8)
    tl = TilingParams(mc=48, nc=64, kc=64, mr=16, nr=64, k_unit=16)
    ok = True
    for case in range(10):
        M = int(rng.integers(1, 160))
        N = int(rng.integers(1, 160))
        K = int(rng.integers(1, 160))
        a, b, c0 = random_inputs(rng, M, N, K, "f32", 1.0)
        bits = set()
        for units in (1, 2, 4):
            out, _ = gemm_on_arrays(
                a, b, c0, GemmConfig(beta=1.0, unit_count=units, tiling=tl))
            bits.add(out.tobytes())
        if len(bits) != 1:
            ok = False
            print(f"  shape {M}x{N}x{K}: units disagree")
    _report(8, "parallel determinism", ok, "[10 shapes x units 1/2/4]")
