"""Planner tests: pinned micro-kernel shapes, the TLB-bound kc solver, and
grid-optimality of the residency-bound (mc, nc) choice against exhaustive
search."""
from fractions import Fraction

import pytest

from smegemm.tiling import (HardwareProfile, PlannerError, TilingParams,
                            budget_lhs_elems, cmr, micro_tile_shape, plan,
                            solve_kc, solve_mc_nc, tlb_ok, validate)


def hw(**kw):
    base = dict(l2_budget_bytes=8 << 20, tlb_entries=256, page_bytes=16384,
                dtype_size_bytes=4, svl_bits=512, dtype="f32")
    base.update(kw)
    return HardwareProfile(**base)


def exhaustive_grid_best(profile, kc, mr, nr):
    """Full 2-D scan over (mr, nr) multiples under the residency bound."""
    budget = profile.budget_elems
    best = None
    mc = mr
    while mr * kc + 2 * kc * nr + 2 * mr * nr < budget and mc * kc < budget:
        nc = nr
        while budget_lhs_elems(mc, nc, kc) < budget:
            val = Fraction(2 * mc * nc * kc,
                           mc * kc + kc * nc + 2 * mc * nc)
            if best is None or val > best[0] or (val == best[0] and nc > best[2]):
                best = (val, mc, nc)
            nc += nr
        if budget_lhs_elems(mc, nr, kc) >= budget:
            break
        mc += mr
    return best


# ---------------------------------------------------------------------------
# micro-kernel shapes

def test_micro_tile_shape_pinned():
    assert micro_tile_shape("f32", 512, "row") == (16, 64)
    assert micro_tile_shape("f32", 512, "col") == (64, 16)
    assert micro_tile_shape("f64", 512, "row") == (8, 32)
    assert micro_tile_shape("f16", 512, "row") == (16, 64)
    assert micro_tile_shape("i8", 512, "row") == (16, 64)
    assert micro_tile_shape("f32", 1024, "row") == (32, 128)
    with pytest.raises(PlannerError):
        micro_tile_shape("f32", 512, "diag")


# ---------------------------------------------------------------------------
# kc solver

def test_solve_kc_frozen_example():
    # exhaustive scan over 16-multiples for page=4096, 64 entries, ds=4:
    # kc=304 gives 6 + 2*20 + 16 = 62 < 64; kc=320 gives 64 (not strict)
    p = hw(page_bytes=4096, tlb_entries=64)
    assert solve_kc(p, 16, 64) == 304
    assert tlb_ok(p, 16, 64, 304)
    assert not tlb_ok(p, 16, 64, 304 + 16)


def test_solve_kc_matches_scan_various():
    for page in (4096, 16384):
        for entries in (40, 64, 200, 256):
            p = hw(page_bytes=page, tlb_entries=entries)
            try:
                kc = solve_kc(p, 16, 64)
            except PlannerError:
                assert not tlb_ok(p, 16, 64, 16)
                continue
            # independent scan
            best = 0
            k = 16
            while k <= kc + 160:
                if tlb_ok(p, 16, 64, k):
                    best = k
                k += 16
            assert kc == best


def test_solve_kc_minimal_floor():
    # huge page: Ta = Tb = 2 regardless of kc, so the bound reads
    # 2 + 4 + mr < entries; mr + 7 entries admit exactly kc = k_unit ... cap
    p = hw(page_bytes=1 << 40, tlb_entries=16 + 7)
    kc = solve_kc(p, 16, 64)
    assert kc >= 16 and kc % 16 == 0
    assert tlb_ok(p, 16, 64, 16)


def test_solve_kc_infeasible():
    p = hw(page_bytes=1 << 40, tlb_entries=16 + 6)
    with pytest.raises(PlannerError):
        solve_kc(p, 16, 64)


def test_solve_kc_plus_unit_violates():
    for entries in (64, 128, 256):
        p = hw(tlb_entries=entries)
        kc = solve_kc(p, 16, 64)
        assert not tlb_ok(p, 16, 64, kc + 16)


# ---------------------------------------------------------------------------
# mc/nc solver

def test_cmr_values():
    assert cmr(64, 64, 64) == 32.0          # t/2 at mc=nc=kc=t
    assert cmr(1, 1, 1) == 0.5
    for mc, nc, kc in ((16, 64, 304), (176, 64, 768), (32, 128, 96)):
        direct = 2 * mc * nc * kc / (mc * kc + kc * nc + 2 * mc * nc)
        assert cmr(mc, nc, kc) == pytest.approx(direct, rel=0, abs=0)


@pytest.mark.parametrize("budget_kb,kc", [(64, 96), (256, 304), (1024, 304),
                                          (512, 160), (128, 48)])
def test_solve_mc_nc_matches_exhaustive(budget_kb, kc):
    p = hw(l2_budget_bytes=budget_kb << 10)
    mc, nc = solve_mc_nc(p, kc, 16, 64)
    best = exhaustive_grid_best(p, kc, 16, 64)
    assert best is not None
    got = Fraction(2 * mc * nc * kc, mc * kc + kc * nc + 2 * mc * nc)
    assert got == best[0]
    assert budget_lhs_elems(mc, nc, kc) < p.budget_elems
    assert mc % 16 == 0 and nc % 64 == 0


def test_solve_mc_nc_exact_grid_point():
    # budget placed one element above a grid point's requirement returns it
    kc = 64
    mc, nc = 32, 128
    budget_elems = budget_lhs_elems(mc, nc, kc) + 1
    p = hw(l2_budget_bytes=budget_elems * 4)
    got = solve_mc_nc(p, kc, 16, 64)
    assert budget_lhs_elems(*got, kc) < budget_elems


def test_solve_mc_nc_degenerate_kc():
    p = hw(l2_budget_bytes=1 << 16)
    mc, nc = solve_mc_nc(p, 1, 16, 64)
    best = exhaustive_grid_best(p, 1, 16, 64)
    assert Fraction(2 * mc * nc, mc + nc + 2 * mc * nc) == best[0]


def test_solve_mc_nc_infeasible():
    p = hw(l2_budget_bytes=1 << 12)  # cannot hold one 16x64 cell at kc=304
    with pytest.raises(PlannerError):
        solve_mc_nc(p, 304, 16, 64)


def test_budget_monotonicity():
    prev = 0.0
    for kb in (96, 128, 256, 512, 1024, 4096, 8192):
        p = hw(l2_budget_bytes=kb << 10)
        t = plan(p)
        val = cmr(t.mc, t.nc, t.kc)
        assert val >= prev
        prev = val


# ---------------------------------------------------------------------------
# validate / plan

def test_plan_output_validates():
    for kw in (dict(), dict(l2_budget_bytes=1 << 20, tlb_entries=64,
                            page_bytes=4096),
               dict(dtype="f16", dtype_size_bytes=2),
               dict(dtype="i8", dtype_size_bytes=1),
               dict(dtype="f64", dtype_size_bytes=8)):
        p = hw(**kw)
        t = plan(p)
        assert validate(t, p) == []


def test_plan_col_layout_shapes():
    p = hw()
    t = plan(p, layout="col")
    assert (t.mr, t.nr) == (64, 16)
    assert t.mc % 64 == 0 and t.nc % 16 == 0
    assert validate(t, p) == []


def test_validate_names_violations():
    p = hw()
    t = plan(p)
    bad = TilingParams(mc=t.mc * 4, nc=t.nc * 4, kc=t.kc, mr=t.mr, nr=t.nr,
                       k_unit=t.k_unit)
    msgs = validate(bad, p)
    assert any("residency" in m for m in msgs)
    bad2 = TilingParams(mc=t.mc, nc=t.nc, kc=t.kc + 16 * 400, mr=t.mr,
                        nr=t.nr, k_unit=t.k_unit)
    assert any("TLB" in m for m in validate(bad2, p))
    bad3 = TilingParams(mc=t.mc + 1, nc=t.nc, kc=t.kc, mr=t.mr, nr=t.nr,
                        k_unit=t.k_unit)
    assert any("multiple of mr" in m for m in validate(bad3, p))


def test_plan_clamps_to_problem():
    p = hw()
    t = plan(p, max_m=40, max_n=100, max_k=50)
    assert t.mc == 48 and t.nc == 128 and t.kc == 64
    assert t.mc % t.mr == 0 and t.nc % t.nr == 0 and t.kc % t.k_unit == 0


def test_k_unit_per_dtype():
    assert plan(hw()).k_unit == 16
    assert plan(hw(dtype="f16", dtype_size_bytes=2)).k_unit == 32
    assert plan(hw(dtype="i8", dtype_size_bytes=1)).k_unit == 64
    assert plan(hw(dtype="f64", dtype_size_bytes=8)).k_unit == 16


def test_profile_validation():
    with pytest.raises(PlannerError):
        HardwareProfile(dtype_size_bytes=3)
    with pytest.raises(PlannerError):
        HardwareProfile(l2_budget_bytes=0)
