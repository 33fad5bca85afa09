"""Six-level blocked GEMM over the emulated instruction set.

Loop structure per compute block: L1 walks N in nc strips and L3 walks M in
mc strips; each (mc, nc) pair is one self-contained task whose L2 loop walks
K in kc slabs (never parallel: K carries the accumulation dependency).
Inside a slab, on-the-fly transposition packs the A block, L4/L5 walk the
mr/nr panels, and L6 dispatches main or edge micro-kernels.  B panels are
packed online during the first L4 pass (lazily, at first use) or upfront.

Parallel runs distribute the (mc, nc) task grid block-cyclically over
simulated units; every unit owns a private machine state, private L2/TLB
simulators (the topology gives each unit its own L2), and private packing
regions, so results and statistics are bit-deterministic for any unit count.

beta is applied exactly once per C element (on the first K slab; later slabs
accumulate with beta = 1); alpha folds into the preload/writeback scales of
every slab, see kernels.
"""
from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import packing
from .dtypes import ElemType, elem_type
from .kernels import (MAIN_KERNELS, MicroTask, kernel_f32_edge,
                      scale_c_inplace)
from .machine import InstrStats, MachineConfig, MachineState
from .memsim import (MatrixView, MemoryImage, MemStats, MemSystem,
                     SystemProfile)
from .tiling import HardwareProfile, TilingParams, plan

ACC_DTYPE = {"f32": "f32", "f64": "f64", "f16": "f32", "i8": "i32"}

_ws_ids = itertools.count()


class GemmError(ValueError):
    pass


@dataclass
class GemmConfig:
    """Precision pair, scaling, layout, parallelism and ablation switches.

    A tiling override is interpreted in canonical row-major terms (the
    column-major path runs the row-major pipeline on transposed views).
    """

    dtype: str = "f32"
    alpha: float = 1.0
    beta: float = 0.0
    layout: str = "row"
    unit_count: int = 1
    blocking_on: bool = True
    four_way_loads_on: bool = True
    online_pack_on: bool = True
    tiling: TilingParams | None = None
    trace_dir: str | None = None
    dump_packed_dir: str | None = None


@dataclass
class KernelTally:
    main_calls: int = 0
    edge_calls: int = 0
    bad_tile_scopes: int = 0
    interior_calls: int = 0
    interior_loads_g4: int = 0
    interior_loads_g12: int = 0

    def merge(self, o: "KernelTally"):
        self.main_calls += o.main_calls
        self.edge_calls += o.edge_calls
        self.bad_tile_scopes += o.bad_tile_scopes
        self.interior_calls += o.interior_calls
        self.interior_loads_g4 += o.interior_loads_g4
        self.interior_loads_g12 += o.interior_loads_g12


@dataclass
class RunReport:
    m: int
    n: int
    k: int
    dtype: str
    layout: str
    alpha: float
    beta: float
    unit_count: int
    blocking_on: bool
    four_way_loads_on: bool
    online_pack_on: bool
    tiling: dict
    instr: dict
    mem_units: list
    mem_total: dict
    main_kernel_calls: int
    edge_kernel_calls: int
    tile_touch_violations: int
    interior_calls: int
    interior_loads_g4: int
    interior_loads_g12: int
    footprint_bytes: int
    footprint_limit: int
    footprint_ok: bool
    wall_time_s: float
    verdict: str | None = None
    max_scaled_err: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write(self, path: str | Path):
        Path(path).write_text(self.to_json() + "\n")

    def summary_line(self) -> str:
        mem = self.mem_total
        return (f"{self.m:>6} {self.n:>6} {self.k:>6} {self.dtype:>4} "
                f"{self.layout:>3} u{self.unit_count} "
                f"{self.verdict or '-':>5} "
                f"l2m={mem['l2_misses']:>9} tlbm={mem['tlb_misses']:>7} "
                f"ld4={self.instr['loads_g4']:>9} "
                f"edge={self.edge_kernel_calls:>4} "
                f"t={self.wall_time_s:.3f}s")


def schedule_parallel(config: GemmConfig, grid: list) -> list[list]:
    """Block-cyclic assignment of (m0, n0) tasks to units; deterministic so
    statistics are reproducible, each C block written by exactly one task."""
    units = max(1, config.unit_count)
    buckets = [[] for _ in range(units)]
    for i, t in enumerate(grid):
        buckets[i % units].append(t)
    return buckets


@dataclass
class _RunCtx:
    cfg: GemmConfig
    et: ElemType
    a: MatrixView
    b: MatrixView
    c: MatrixView
    tl: TilingParams
    img: MemoryImage
    ac_bases: list
    bc_bases: list
    b_packed: bool
    online: bool
    load_group: int
    edge_ok: bool
    profile: SystemProfile
    dump_dir: str | None = None


def _build_dispatch(m_act: int, n_act: int, t_side: int, edge_ok: bool):
    """Kernel dispatch list for one (m_act, n_act) block: (kind, m_off,
    n_panel, col_off, rows, cols), ordered so the first L4 sweep visits every
    B panel once."""
    nr = 4 * t_side
    mr = t_side
    tasks = []
    for q in range(-(-n_act // nr)):
        cols_q = min(nr, n_act - q * nr)
        if cols_q == nr or not edge_ok or m_act < nr:
            for m0 in range(0, m_act, mr):
                tasks.append(("main", m0, q, 0, min(mr, m_act - m0), cols_q))
        else:
            groups = m_act // nr
            for g in range(groups):
                for j0 in range(0, cols_q, mr):
                    tasks.append(("edge", g * nr, q, j0, nr,
                                  min(mr, cols_q - j0)))
            for m0 in range(groups * nr, m_act, mr):
                tasks.append(("main", m0, q, 0, min(mr, m_act - m0), cols_q))
    tasks.sort(key=lambda t: (t[1], t[2], t[3]))
    return tasks


def _run_block(machine: MachineState, ctx: _RunCtx, tally: KernelTally,
               unit: int, m0: int, n0: int, dispatch_cache: dict):
    cfg, et, tl = ctx.cfg, ctx.et, ctx.tl
    a, b, c = ctx.a, ctx.b, ctx.c
    img = ctx.img
    svl = machine.config.svl_bits
    vb = svl // 8
    acc_sz = et.acc_size
    in_sz = et.in_size
    t_side = svl // (acc_sz * 8)
    nr = 4 * t_side
    ku = et.k_unit
    m_act = min(tl.mc, a.rows - m0)
    n_act = min(tl.nc, b.cols - n0)
    key = (m_act, n_act)
    if key not in dispatch_cache:
        dispatch_cache[key] = _build_dispatch(m_act, n_act, t_side, ctx.edge_ok)
    dispatch = dispatch_cache[key]
    kdim = a.cols
    group_cols = packing.b_group_cols(et, svl)
    n_alloc = -(-n_act // nr) * nr
    ac_base = ctx.ac_bases[unit]
    bc_base = ctx.bc_bases[unit]
    main_kernel = MAIN_KERNELS[et.name]
    ldc_bytes = c.ld * acc_sz

    for k0 in range(0, kdim, tl.kc):
        k_act = min(tl.kc, kdim - k0)
        kc_pad = -(-k_act // ku) * ku
        beta_eff = cfg.beta if k0 == 0 else 1.0
        packing.pack_a(a, (m0, k0, m_act, k_act), machine, ac_base, kc_pad,
                       et.name, ctx.load_group)
        packed_groups: set[int] = set()

        def ensure_group(g: int):
            if g in packed_groups:
                return
            packed_groups.add(g)
            g0 = g * group_cols
            packing.pack_b_group(
                b, k0, n0 + g0, k_act, min(group_cols, n_act - g0), machine,
                bc_base + g0 * kc_pad * in_sz, kc_pad,
                min(group_cols, n_alloc - g0), et.name, ctx.load_group)

        if ctx.b_packed and not ctx.online:
            for g in range(-(-n_alloc // group_cols)):
                ensure_group(g)

        if ctx.dump_dir and unit == 0 and m0 == 0 and n0 == 0 and k0 == 0:
            _dump_buffers(ctx, machine, img, m_act, n_act, kc_pad, ensure_group,
                          n_alloc, group_cols)

        pan_bytes = t_side * kc_pad * in_sz
        for kind, moff, q, j0, rows, cols in dispatch:
            if ctx.b_packed:
                if ctx.online:
                    ensure_group((q * nr) // group_cols)
                if et.name == "f16":
                    br_base = bc_base + 2 * q * (kc_pad * 64)
                    br_stride = 2 * vb
                elif et.name == "i8":
                    br_base = bc_base + q * (kc_pad * 64)
                    br_stride = 4 * vb
                else:
                    br_base = bc_base + q * (kc_pad * nr * in_sz) + j0 * in_sz
                    br_stride = nr * in_sz
                b_count = None
            else:
                br_base = b.elem_addr(k0, n0 + q * nr + j0, in_sz)
                br_stride = b.ld * in_sz
                b_count = cols
            task = MicroTask(
                ar_base=ac_base + (moff // t_side) * pan_bytes,
                br_base=br_base, br_stride=br_stride,
                cr_base=c.elem_addr(m0 + moff, n0 + q * nr + j0, acc_sz),
                ldc_bytes=ldc_bytes, rows=rows, cols=cols,
                kc_pad=kc_pad, k_act=k_act,
                alpha=cfg.alpha, beta_eff=beta_eff,
                b_count=b_count,
                interior=(kind == "main" and rows == t_side and cols == nr
                          and k_act == kc_pad),
                load_group=ctx.load_group)
            st = machine.stats
            before = (st.loads_g1, st.loads_g2, st.loads_g4)
            if kind == "edge":
                tiles_n = kernel_f32_edge(machine, img, task)
                tally.edge_calls += 1
            else:
                tiles_n = main_kernel(machine, img, task)
                tally.main_calls += 1
            if tiles_n != 4:
                tally.bad_tile_scopes += 1
            if task.interior:
                tally.interior_calls += 1
                tally.interior_loads_g4 += st.loads_g4 - before[2]
                tally.interior_loads_g12 += (st.loads_g1 - before[0]
                                             + st.loads_g2 - before[1])


def _dump_buffers(ctx, machine, img, m_act, n_act, kc_pad, ensure_group,
                  n_alloc, group_cols):
    et = ctx.et
    d = Path(ctx.dump_dir)
    t_side = machine.config.svl_bits // (et.acc_size * 8)
    ac_bytes = -(-m_act // t_side) * t_side * kc_pad * et.in_size
    packing.dump_packed(img, ctx.ac_bases[0], ac_bytes, d / "ac_unit0.bin",
                        {"rows": m_act, "kc_pad": kc_pad, "dtype": et.name,
                         "interleave": et.interleave, "panel_rows": t_side,
                         "order": "column-major panels"})
    if ctx.b_packed:
        for g in range(-(-n_alloc // group_cols)):
            ensure_group(g)
        bc_bytes = n_alloc * kc_pad * et.in_size
        packing.dump_packed(img, ctx.bc_bases[0], bc_bytes, d / "bc_unit0.bin",
                            {"kc_pad": kc_pad, "cols": n_act,
                             "dtype": et.name, "interleave": et.interleave,
                             "order": "row-major panels"})


def _canonical(config: GemmConfig, A: MatrixView, B: MatrixView, C: MatrixView):
    if config.layout == "col":
        return B.transposed(), A.transposed(), C.transposed()
    return A, B, C


def _effective_tiling(config: GemmConfig, profile: SystemProfile,
                      cm: int, cn: int, ck: int, et: ElemType) -> TilingParams:
    """Tiling for the canonical problem, clamped to its padded extents."""
    svl = profile.svl_bits
    t_side = svl // (et.acc_size * 8)
    mr, nr = t_side, 4 * t_side
    ku = et.k_unit
    pad = lambda x, u: -(-x // u) * u
    if not config.blocking_on:
        return TilingParams(mc=pad(cm, mr), nc=pad(cn, nr), kc=pad(ck, ku),
                            mr=mr, nr=nr, k_unit=ku)
    if config.tiling is not None:
        tl = config.tiling
        if tl.mc % mr or tl.nc % nr or tl.kc % ku or min(tl.mc, tl.nc, tl.kc) <= 0:
            raise GemmError(
                f"tiling override ({tl.mc},{tl.nc},{tl.kc}) must be positive "
                f"multiples of ({mr},{nr},{ku}) for dtype {et.name}")
        return TilingParams(mc=min(tl.mc, pad(cm, mr)),
                            nc=min(tl.nc, pad(cn, nr)),
                            kc=min(tl.kc, pad(ck, ku)),
                            mr=mr, nr=nr, k_unit=ku)
    hw = HardwareProfile.from_system(profile, et.name)
    return plan(hw, "row", max_m=cm, max_n=cn, max_k=ck)


def workspace_bytes(tl: TilingParams, et: ElemType, b_packed: bool,
                    svl_bits: int = 512) -> tuple[int, int]:
    t_side = svl_bits // (et.acc_size * 8)
    ac = -(-tl.mc // t_side) * t_side * tl.kc * et.in_size
    bc = tl.nc * tl.kc * et.in_size if b_packed else 0
    return ac, bc


def gemm(config: GemmConfig, A: MatrixView, B: MatrixView, C: MatrixView,
         profile: SystemProfile | None = None) -> RunReport:
    """C = alpha * A @ B + beta * C on the emulated machine."""
    profile = profile or SystemProfile()
    if config.dtype not in MAIN_KERNELS:
        raise GemmError(f"unsupported gemm dtype {config.dtype!r}")
    et = elem_type(config.dtype)
    if config.layout not in ("row", "col"):
        raise GemmError("layout must be 'row' or 'col'")
    for v, name in ((A, "A"), (B, "B"), (C, "C")):
        if v.order != config.layout:
            raise GemmError(f"{name} storage order {v.order!r} does not match "
                            f"config layout {config.layout!r}")
    if A.dtype != config.dtype or B.dtype != config.dtype:
        raise GemmError("A/B element type must match config dtype")
    if C.dtype != ACC_DTYPE[config.dtype]:
        raise GemmError(f"C must be {ACC_DTYPE[config.dtype]} for "
                        f"{config.dtype} inputs")
    m, k = A.rows, A.cols
    k2, n = B.rows, B.cols
    if k != k2 or C.rows != m or C.cols != n:
        raise GemmError(f"shape mismatch: A {m}x{k}, B {k2}x{n}, "
                        f"C {C.rows}x{C.cols}")
    if C.overlaps(A) or C.overlaps(B):
        raise GemmError("C must not overlap A or B")
    if et.is_int and (config.alpha != int(config.alpha)
                      or config.beta != int(config.beta)):
        raise GemmError("integer gemm requires integral alpha and beta")

    t0 = time.perf_counter()
    ca, cb, cc = _canonical(config, A, B, C)
    tl = _effective_tiling(config, profile, ca.rows, cb.cols, ca.cols, et)
    b_packed = config.blocking_on or et.interleave > 1
    online = config.online_pack_on and config.blocking_on and b_packed
    units = max(1, config.unit_count)

    if config.alpha == 0:
        machine = MachineState(MachineConfig(profile.svl_bits, 0),
                               MemSystem(profile.cache_config(),
                                         profile.tlb_config()))
        scale_c_inplace(machine, cc.image, cc.base, cc.ld * et.acc_size,
                        cc.rows, cc.cols, config.beta, config.dtype)
        return _assemble_report(config, m, n, k, tl, profile,
                                [machine], [KernelTally()],
                                time.perf_counter() - t0, et, b_packed)

    ws = next(_ws_ids)
    ac_bytes, bc_bytes = workspace_bytes(tl, et, b_packed, profile.svl_bits)
    img = A.image
    ac_bases, bc_bases = [], []
    for u in range(units):
        ac_bases.append(img.alloc_region(f"ws{ws}.ac.u{u}", ac_bytes))
        bc_bases.append(img.alloc_region(f"ws{ws}.bc.u{u}", bc_bytes)
                        if bc_bytes else 0)

    ctx = _RunCtx(cfg=config, et=et, a=ca, b=cb, c=cc, tl=tl, img=img,
                  ac_bases=ac_bases, bc_bases=bc_bases, b_packed=b_packed,
                  online=online, load_group=4 if config.four_way_loads_on else 1,
                  edge_ok=(et.name == "f32"), profile=profile,
                  dump_dir=config.dump_packed_dir)

    grid = [(m0, n0) for n0 in range(0, cb.cols, tl.nc)
            for m0 in range(0, ca.rows, tl.mc)]
    buckets = schedule_parallel(config, grid)

    def run_unit(u: int):
        machine = MachineState(MachineConfig(profile.svl_bits, u),
                               MemSystem(profile.cache_config(),
                                         profile.tlb_config()))
        if config.trace_dir is not None:
            machine.trace = []
        tally = KernelTally()
        cache: dict = {}
        for m0, n0 in buckets[u]:
            _run_block(machine, ctx, tally, u, m0, n0, cache)
        return machine, tally

    if units == 1:
        results = [run_unit(0)]
    else:
        with ThreadPoolExecutor(max_workers=units) as ex:
            results = list(ex.map(run_unit, range(units)))

    if config.trace_dir is not None:
        d = Path(config.trace_dir)
        d.mkdir(parents=True, exist_ok=True)
        for u, (machine, _) in enumerate(results):
            (d / f"unit{u}.trace").write_text("\n".join(machine.trace or []) + "\n")

    machines = [r[0] for r in results]
    tallies = [r[1] for r in results]
    return _assemble_report(config, m, n, k, tl, profile, machines, tallies,
                            time.perf_counter() - t0, et, b_packed)


def gemm_ablated(config: GemmConfig, A: MatrixView, B: MatrixView,
                 C: MatrixView, profile: SystemProfile | None = None) -> RunReport:
    """gemm with the ablation switches in config honored; numerics are
    identical in every mode, only the statistics differ."""
    return gemm(config, A, B, C, profile)


def _assemble_report(config, m, n, k, tl, profile, machines, tallies,
                     wall, et, b_packed) -> RunReport:
    instr = InstrStats()
    mem_units = []
    mem_total = MemStats()
    for mach in machines:
        instr.merge(mach.stats)
        mem_units.append(mach.memsys.stats.as_dict())
        mem_total.merge(mach.memsys.stats)
    tally = KernelTally()
    for t in tallies:
        tally.merge(t)
    nr = tl.nr
    fp = (tl.mc * tl.kc * et.in_size + tl.kc * tl.nc * et.in_size
          + tl.mc * tl.nc * et.acc_size + tl.kc * nr * et.in_size)
    return RunReport(
        m=m, n=n, k=k, dtype=config.dtype, layout=config.layout,
        alpha=config.alpha, beta=config.beta,
        unit_count=max(1, config.unit_count),
        blocking_on=config.blocking_on,
        four_way_loads_on=config.four_way_loads_on,
        online_pack_on=config.online_pack_on,
        tiling=tl.as_dict(), instr=instr.as_dict(),
        mem_units=mem_units, mem_total=mem_total.as_dict(),
        main_kernel_calls=tally.main_calls,
        edge_kernel_calls=tally.edge_calls,
        tile_touch_violations=tally.bad_tile_scopes,
        interior_calls=tally.interior_calls,
        interior_loads_g4=tally.interior_loads_g4,
        interior_loads_g12=tally.interior_loads_g12,
        footprint_bytes=fp, footprint_limit=profile.working_set_bytes,
        footprint_ok=fp < profile.working_set_bytes,
        wall_time_s=wall)


def build_problem(M: int, N: int, K: int, config: GemmConfig,
                  profile: SystemProfile | None = None,
                  extra_bytes: int = 0):
    """Image plus A/B/C views sized for one gemm call (matrices, per-unit
    packing buffers, alignment slack)."""
    profile = profile or SystemProfile()
    et = elem_type(config.dtype)
    acc = elem_type(ACC_DTYPE[config.dtype])
    tl = _effective_tiling(config, profile,
                           M if config.layout == "row" else N,
                           N if config.layout == "row" else M, K, et)
    b_packed = config.blocking_on or et.interleave > 1
    ac_b, bc_b = workspace_bytes(tl, et, b_packed, profile.svl_bits)
    units = max(1, config.unit_count)
    cap = (M * K * et.in_size + K * N * et.in_size + M * N * acc.in_size
           + units * (ac_b + bc_b) + 1024 * (units + 4) + extra_bytes)
    img = MemoryImage(cap, profile.cache_config(), profile.tlb_config())
    a_base = img.alloc_region("A", M * K * et.in_size)
    b_base = img.alloc_region("B", K * N * et.in_size)
    c_base = img.alloc_region("C", M * N * acc.in_size)
    mk_ld = lambda r, c: (c if config.layout == "row" else r)
    A = MatrixView(img, a_base, M, K, et.name, config.layout, mk_ld(M, K))
    B = MatrixView(img, b_base, K, N, et.name, config.layout, mk_ld(K, N))
    C = MatrixView(img, c_base, M, N, acc.name, config.layout, mk_ld(M, N))
    return img, A, B, C


def gemm_on_arrays(a: np.ndarray, b: np.ndarray, c0: np.ndarray,
                   config: GemmConfig, profile: SystemProfile | None = None):
    """Stage numpy inputs into a fresh image, run gemm, return (C, report)."""
    M, K = a.shape
    K2, N = b.shape
    img, A, B, C = build_problem(M, N, K, config, profile)
    A.from_array(a)
    B.from_array(b)
    C.from_array(c0)
    report = gemm(config, A, B, C, profile or SystemProfile())
    return C.to_array(), report
