"""Analytical tiling planner.

Produces the block sizes (mc, nc, kc) and micro-kernel shape (mr, nr) for a
hardware profile.  kc is the largest micro-panel depth whose A/B panels and C
rows stay TLB-resident:

    Ta + 2*Tb + Tc < entries,   Ta = ceil(mr*kc*ds / page) + 1,
                                Tb = ceil(nr*kc*ds / page) + 1,  Tc = mr.

(mc, nc) maximize the compute-to-memory ratio

    CMR = 2*mc*nc*kc / (mc*kc + kc*nc + 2*mc*nc)

subject to the residency budget, written with its B/C terms double-counted so
the next loop iteration's panels are reserved too:

    mc*kc + kc*nc + mc*nc + kc*nc + mc*nc  <  budget_bytes / dtype_size.

CMR is strictly increasing in both mc and nc, so the constrained optimum on
the (mr, nr)-multiple grid lies on the budget frontier; the planner scans that
frontier exactly, which is how the "maximize via the multiplier condition,
then project to the grid" recipe stays globally optimal after rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from fractions import Fraction

from .dtypes import elem_type
from .memsim import SystemProfile


class PlannerError(ValueError):
    """No feasible tiling for the given profile; message names the constraint."""


@dataclass(frozen=True)
class HardwareProfile:
    """Inputs the planner needs; derive one from a SystemProfile per dtype."""

    l2_budget_bytes: int = 8 * 1024 * 1024
    tlb_entries: int = 256
    page_bytes: int = 16 * 1024
    dtype_size_bytes: int = 4
    svl_bits: int = 512
    dtype: str = "f32"

    def __post_init__(self):
        if min(self.l2_budget_bytes, self.tlb_entries, self.page_bytes,
               self.dtype_size_bytes, self.svl_bits) <= 0:
            raise PlannerError("profile values must be positive")
        if self.dtype_size_bytes not in (1, 2, 4, 8):
            raise PlannerError("dtype_size must be 1, 2, 4 or 8 bytes")

    @classmethod
    def from_system(cls, sp: SystemProfile, dtype: str = "f32") -> "HardwareProfile":
        et = elem_type(dtype)
        return cls(l2_budget_bytes=sp.working_set_bytes,
                   tlb_entries=sp.tlb_entries,
                   page_bytes=sp.page_bytes,
                   dtype_size_bytes=et.in_size,
                   svl_bits=sp.svl_bits,
                   dtype=dtype)

    @property
    def k_unit(self) -> int:
        return elem_type(self.dtype).k_unit

    @property
    def budget_elems(self) -> int:
        return self.l2_budget_bytes // self.dtype_size_bytes


@dataclass(frozen=True)
class TilingParams:
    mc: int
    nc: int
    kc: int
    mr: int
    nr: int
    k_unit: int = 16

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def micro_tile_shape(dtype: str, svl_bits: int = 512, layout: str = "row") -> tuple[int, int]:
    """Micro-kernel C-block shape using all four accumulator tiles with
    4-register loads along the contiguous dimension of C."""
    et = elem_type(dtype)
    t = svl_bits // (et.acc_size * 8)
    if layout == "row":
        return t, 4 * t
    if layout == "col":
        return 4 * t, t
    raise PlannerError("layout must be 'row' or 'col'")


def _tlb_entries_needed(profile: HardwareProfile, mr: int, nr: int, kc: int) -> tuple[int, int, int]:
    ds, page = profile.dtype_size_bytes, profile.page_bytes
    ta = -(-mr * kc * ds // page) + 1
    tb = -(-nr * kc * ds // page) + 1
    tc = mr
    return ta, tb, tc


def tlb_ok(profile: HardwareProfile, mr: int, nr: int, kc: int) -> bool:
    ta, tb, tc = _tlb_entries_needed(profile, mr, nr, kc)
    return ta + 2 * tb + tc < profile.tlb_entries


_KC_CAP = 1 << 20  # elements; guards the scan when the TLB never binds


def solve_kc(profile: HardwareProfile, mr: int, nr: int) -> int:
    """Largest kc, multiple of the dtype's k-unit, satisfying the TLB bound."""
    ku = profile.k_unit
    if not tlb_ok(profile, mr, nr, ku):
        ta, tb, tc = _tlb_entries_needed(profile, mr, nr, ku)
        raise PlannerError(
            f"TLB constraint infeasible even at kc={ku}: "
            f"Ta+2Tb+Tc = {ta}+2*{tb}+{tc} >= {profile.tlb_entries} entries")
    kc = ku
    while kc + ku <= _KC_CAP and tlb_ok(profile, mr, nr, kc + ku):
        kc += ku
    return kc


def cmr(mc: int, nc: int, kc: int) -> float:
    """Compute-to-memory ratio of one (mc, nc, kc) block."""
    return 2.0 * mc * nc * kc / (mc * kc + kc * nc + 2 * mc * nc)


def _cmr_frac(mc: int, nc: int, kc: int) -> Fraction:
    return Fraction(2 * mc * nc * kc, mc * kc + kc * nc + 2 * mc * nc)


def budget_lhs_elems(mc: int, nc: int, kc: int) -> int:
    """Left side of the residency bound, duplicated terms included."""
    return mc * kc + kc * nc + mc * nc + kc * nc + mc * nc


def _max_nc(mc: int, kc: int, nr: int, budget: int) -> int:
    # largest nr-multiple with mc*kc + 2*kc*nc + 2*mc*nc < budget (strict)
    avail = budget - mc * kc - 1
    per_nc = 2 * (kc + mc)
    if avail < per_nc * nr:
        return 0
    return (avail // per_nc) // nr * nr


def solve_mc_nc(profile: HardwareProfile, kc: int, mr: int, nr: int) -> tuple[int, int]:
    """CMR-optimal (mc, nc) on the (mr, nr) grid under the residency budget.

    Scans the budget frontier (CMR is increasing in both variables, so only
    frontier points can win); exact rational comparison; ties go to the
    larger nc for B-panel reuse.
    """
    budget = profile.budget_elems
    best = None
    mc = mr
    while True:
        nc = _max_nc(mc, kc, nr, budget)
        if nc == 0:
            break
        val = _cmr_frac(mc, nc, kc)
        if best is None or val > best[0] or (val == best[0] and nc > best[2]):
            best = (val, mc, nc)
        mc += mr
    if best is None:
        raise PlannerError(
            f"budget {profile.l2_budget_bytes} B cannot hold one "
            f"({mr} x {nr} x kc={kc}) cell: needs "
            f"{budget_lhs_elems(mr, nr, kc) * profile.dtype_size_bytes} B")
    return best[1], best[2]


def validate(params: TilingParams, profile: HardwareProfile) -> list[str]:
    """Empty list when params satisfy every planner constraint; otherwise one
    message per violation."""
    v = []
    if params.mc % params.mr:
        v.append(f"mc={params.mc} not a multiple of mr={params.mr}")
    if params.nc % params.nr:
        v.append(f"nc={params.nc} not a multiple of nr={params.nr}")
    if params.kc % params.k_unit:
        v.append(f"kc={params.kc} not a multiple of k_unit={params.k_unit}")
    if min(params.mc, params.nc, params.kc) <= 0:
        v.append("all block sizes must be positive")
    lhs = budget_lhs_elems(params.mc, params.nc, params.kc)
    if not lhs < profile.budget_elems:
        v.append(f"residency bound violated: {lhs} >= {profile.budget_elems} elements")
    if not tlb_ok(profile, params.mr, params.nr, params.kc):
        ta, tb, tc = _tlb_entries_needed(profile, params.mr, params.nr, params.kc)
        v.append(f"TLB bound violated: {ta}+2*{tb}+{tc} >= {profile.tlb_entries}")
    return v


def plan(profile: HardwareProfile, layout: str = "row",
         max_m: int | None = None, max_n: int | None = None,
         max_k: int | None = None) -> TilingParams:
    """Full planning pass; optional problem extents clamp the blocks so tiny
    problems do not reserve full-budget buffers."""
    mr, nr = micro_tile_shape(profile.dtype, profile.svl_bits, layout)
    ku = profile.k_unit
    kc = solve_kc(profile, mr, nr)
    # the TLB bound knows nothing about the residency budget; cap kc so at
    # least one (mr, nr) cell stays feasible for the mc/nc stage
    cap = ((profile.budget_elems - 2 * mr * nr - 1) // (mr + 2 * nr)) // ku * ku
    if cap < ku:
        raise PlannerError(
            f"budget {profile.l2_budget_bytes} B cannot hold one "
            f"({mr} x {nr}) cell at kc={ku}")
    kc = min(kc, cap)
    if max_k is not None:
        kc = min(kc, max(ku, -(-max_k // ku) * ku))
    mc, nc = solve_mc_nc(profile, kc, mr, nr)
    if max_m is not None:
        mc = min(mc, max(mr, -(-max_m // mr) * mr))
    if max_n is not None:
        nc = min(nc, max(nr, -(-max_n // nr) * nr))
    params = TilingParams(mc=mc, nc=nc, kc=kc, mr=mr, nr=nr, k_unit=ku)
    bad = validate(params, profile)
    if bad:
        raise PlannerError("planner produced invalid tiling: " + "; ".join(bad))
    return params


def explain(profile: HardwareProfile, layout: str = "row") -> str:
    """Human-readable constraint slack for the planner's choice."""
    params = plan(profile, layout)
    ta, tb, tc = _tlb_entries_needed(profile, params.mr, params.nr, params.kc)
    lhs = budget_lhs_elems(params.mc, params.nc, params.kc)
    lines = [
        f"dtype={profile.dtype} layout={layout} svl={profile.svl_bits}",
        f"micro-kernel mr x nr = {params.mr} x {params.nr}",
        f"kc = {params.kc} (k_unit {params.k_unit})",
        f"  TLB: Ta+2Tb+Tc = {ta}+{2 * tb}+{tc} = {ta + 2 * tb + tc}"
        f" < {profile.tlb_entries} entries (slack {profile.tlb_entries - (ta + 2 * tb + tc)})",
        f"mc x nc = {params.mc} x {params.nc}",
        f"  residency: {lhs} < {profile.budget_elems} elements"
        f" (slack {profile.budget_elems - lhs},"
        f" {(profile.budget_elems - lhs) * profile.dtype_size_bytes} bytes)",
        f"  CMR = {cmr(params.mc, params.nc, params.kc):.3f}",
    ]
    return "\n".join(lines)
