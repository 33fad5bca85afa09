"""Packing of A/B blocks into the contiguous buffers the micro-kernels read.

Everything here executes on the emulated instruction set, so packing traffic
shows up in the instruction and cache counters like any other code.

Buffer layouts (canonical row-major pipeline, svl-derived T = tile side):

  Ac  per dtype: column-major panels of T rows.  One "unit column" is the
      group of `interleave` consecutive K elements of one row; unit column u
      of panel p lives at p*T*kc_pad*in_size + u*(T*interleave*in_size), with
      the T rows adjacent.  f32/f64 keep interleave 1 (plain transpose); f16
      keeps K pairs adjacent per row; i8 keeps K quads adjacent.

  Bc  f32/f64: row-major panels of nr columns (kc_pad rows of nr*in bytes).
      f16: 32-column sub-blocks; each logical row interleaves two consecutive
      K rows lane-wise (ZIP), 64 half words per sub-block row.
      i8: 64-column panels; each logical row interleaves four consecutive
      K rows (two ZIP rounds), 256 bytes per row.
      All variants fill exactly n_alloc*kc_pad*in_size bytes; K and N padding
      is written as zeros so kernels can load unpredicated.

The A transposition runs through ZA: each T x (4T units) sub-panel is loaded
row-wise into horizontal tile slices with one 4-register load per row, then
drained through vertical slices in 4-register groups, which lands the data
column-major in Ac with contiguous ascending stores.
"""
from __future__ import annotations

import json
from pathlib import Path

from .dtypes import ElemType, elem_type
from .machine import MachineState, PredicateReg, TileView
from .memsim import MatrixView, MemoryImage


def ld_series(machine: MachineState, mem: MemoryImage, addr: int,
              first_reg: int, n_regs: int, elem_width: int,
              count: int | None = None, group: int = 4):
    """Emit loads covering n_regs consecutive registers using instructions of
    at most `group` registers; `count` predicates the whole series."""
    lanes_per_reg = machine.config.svl_bits // elem_width
    esz = elem_width // 8
    r = 0
    while r < n_regs:
        g = min(group, n_regs - r)
        if g == 3:
            g = 2
        pred = None
        if count is not None:
            c = min(max(count - r * lanes_per_reg, 0), g * lanes_per_reg)
            if c < g * lanes_per_reg:
                pred = PredicateReg(count=c, svl_bits=machine.config.svl_bits)
        machine.ld_multi(mem, addr + r * lanes_per_reg * esz, g,
                         first_reg + r, elem_width, pred)
        r += g


def st_series(machine: MachineState, mem: MemoryImage, addr: int,
              first_reg: int, n_regs: int, elem_width: int,
              count: int | None = None, group: int = 4):
    lanes_per_reg = machine.config.svl_bits // elem_width
    esz = elem_width // 8
    r = 0
    while r < n_regs:
        g = min(group, n_regs - r)
        if g == 3:
            g = 2
        pred = None
        if count is not None:
            c = min(max(count - r * lanes_per_reg, 0), g * lanes_per_reg)
            if c < g * lanes_per_reg:
                pred = PredicateReg(count=c, svl_bits=machine.config.svl_bits)
        machine.st_multi(mem, addr + r * lanes_per_reg * esz, g,
                         first_reg + r, elem_width, pred)
        r += g


def a_panel_bytes(et: ElemType, kc_pad: int, svl_bits: int = 512) -> int:
    t = svl_bits // (et.acc_size * 8)
    return t * kc_pad * et.in_size


def b_group_cols(et: ElemType, svl_bits: int = 512) -> int:
    """Columns of B covered by one 4-register row load (the packing granule)."""
    return 4 * (svl_bits // 8) // et.in_size


def _pack_a_block(machine: MachineState, a: MatrixView, m0: int, k0: int,
                  m_act: int, k_act: int, ac_base: int, kc_pad: int,
                  et: ElemType, load_group: int = 4):
    img = a.image
    svl = machine.config.svl_bits
    vb = svl // 8
    acc_w = et.acc_size * 8
    t_side = svl // acc_w
    tiles = tuple(TileView(acc_w, t) for t in range(4))
    span = 4 * vb // et.in_size           # input elements per ZA pass
    units_total = kc_pad // et.interleave
    pan_bytes = t_side * kc_pad * et.in_size
    in_w = et.in_size * 8
    if kc_pad % et.k_unit or kc_pad < k_act:
        raise ValueError("kc_pad must be a k_unit multiple covering k_act")
    n_panels = -(-m_act // t_side)
    for p in range(n_panels):
        rows = min(t_side, m_act - p * t_side)
        pan = ac_base + p * pan_bytes
        for c0 in range(0, kc_pad, span):
            k_here = min(span, k_act - c0)
            if rows < t_side or k_here < span:
                machine.zero_za(tiles)
            cnt = None if k_here == span else k_here
            for i in range(rows):
                addr = a.elem_addr(m0 + p * t_side + i, k0 + c0, et.in_size)
                ld_series(machine, img, addr, 0, 4, in_w, cnt, load_group)
                for ti in range(4):
                    machine.mova("regs_to_tile", tiles[ti], i, "horizontal", ti)
            for ti in range(4):
                ucol0 = c0 // et.interleave + ti * t_side
                if ucol0 >= units_total:
                    break
                for jj in range(0, t_side, 4):
                    uc = ucol0 + jj
                    if uc >= units_total:
                        break
                    machine.mova("tile_to_regs", tiles[ti], jj, "vertical",
                                 (0, 1, 2, 3))
                    st_series(machine, img, pan + uc * vb, 0, 4, acc_w)


def pack_a_f32_transpose(a: MatrixView, block, machine: MachineState,
                         ac_base: int, kc_pad: int, load_group: int = 4):
    """On-the-fly transposition of an f32 block of A into column-major
    T-row panels; block is (m0, k0, m_act, k_act)."""
    _pack_a_block(machine, a, *block, ac_base, kc_pad, elem_type("f32"), load_group)


def pack_a_f64_transpose(a: MatrixView, block, machine: MachineState,
                         ac_base: int, kc_pad: int, load_group: int = 4):
    _pack_a_block(machine, a, *block, ac_base, kc_pad, elem_type("f64"), load_group)


def pack_a_f16_transpose(a: MatrixView, block, machine: MachineState,
                         ac_base: int, kc_pad: int, load_group: int = 4):
    """Pair-granular transposition: consecutive (k, k+1) half words stay
    adjacent, attached to their row index, matching the widening decode."""
    _pack_a_block(machine, a, *block, ac_base, kc_pad, elem_type("f16"), load_group)


def pack_a_i8_transpose(a: MatrixView, block, machine: MachineState,
                        ac_base: int, kc_pad: int, load_group: int = 4):
    """Quad-granular transposition matching the 4-way int8 decode."""
    _pack_a_block(machine, a, *block, ac_base, kc_pad, elem_type("i8"), load_group)


def pack_a(a: MatrixView, block, machine: MachineState, ac_base: int,
           kc_pad: int, dtype: str, load_group: int = 4):
    _pack_a_block(machine, a, *block, ac_base, kc_pad, elem_type(dtype), load_group)


def _pack_b_rows(machine, b: MatrixView, k0, n0, k_act, cols_act,
                 dst_base, kc_pad, et, load_group):
    """f32/f64 panel: kc_pad row-major rows of nr columns."""
    img = b.image
    svl = machine.config.svl_bits
    nr = 4 * (svl // 8) // et.in_size
    row_bytes = nr * et.in_size
    in_w = et.in_size * 8
    cnt = None if cols_act >= nr else cols_act
    for k in range(k_act):
        ld_series(machine, img, b.elem_addr(k0 + k, n0, et.in_size),
                  0, 4, in_w, cnt, load_group)
        st_series(machine, img, dst_base + k * row_bytes, 0, 4, in_w)
    if kc_pad > k_act:
        machine.dup_zero(0, 4)
        for k in range(k_act, kc_pad):
            st_series(machine, img, dst_base + k * row_bytes, 0, 4, in_w)


def _pack_b_f16_group(machine, b, k0, n0, k_act, cols_act, dst_base,
                      kc_pad, alloc_cols, load_group):
    """One 128-column group = four 32-column sub-blocks, rows ZIP-interleaved
    in pairs.  alloc_cols (a multiple of 64) bounds which sub-blocks exist."""
    img = b.image
    et = elem_type("f16")
    sb_bytes = (kc_pad // 2) * 128
    n_sbs = min(4, alloc_cols // 32)
    for p in range(kc_pad // 2):
        for half, kk in enumerate((2 * p, 2 * p + 1)):
            reg0 = 4 * half
            if kk < k_act:
                c = None if cols_act >= 128 else cols_act
                ld_series(machine, img, b.elem_addr(k0 + kk, n0, 2),
                          reg0, 4, 16, c, load_group)
            else:
                machine.dup_zero(reg0, 4)
        for c in range(n_sbs):
            machine.zip_regs(c, 4 + c, 16, 8, 9)
            st_series(machine, img, dst_base + c * sb_bytes + p * 128,
                      8, 2, 16, None, 2)


def _pack_b_i8_group(machine, b, k0, n0, k_act, cols_act, dst_base,
                     kc_pad, alloc_cols, load_group):
    """One 256-column group = four 64-column panels, rows interleaved in
    quads via two ZIP rounds."""
    img = b.image
    pan_bytes = (kc_pad // 4) * 256
    n_pans = min(4, alloc_cols // 64)
    for p in range(kc_pad // 4):
        for r in range(4):
            kk = 4 * p + r
            reg0 = 4 * r
            if kk < k_act:
                c = None if cols_act >= 256 else cols_act
                ld_series(machine, img, b.elem_addr(k0 + kk, n0, 1),
                          reg0, 4, 8, c, load_group)
            else:
                machine.dup_zero(reg0, 4)
        for c in range(n_pans):
            machine.zip_regs(c, 8 + c, 8, 16, 17)        # rows 0/2
            machine.zip_regs(4 + c, 12 + c, 8, 18, 19)   # rows 1/3
            machine.zip_regs(16, 18, 8, 20, 21)
            machine.zip_regs(17, 19, 8, 22, 23)
            st_series(machine, img, dst_base + c * pan_bytes + p * 256,
                      20, 4, 8)


def pack_b_group(b: MatrixView, k0: int, n0_group: int, k_act: int,
                 cols_act: int, machine: MachineState, bc_base_group: int,
                 kc_pad: int, alloc_cols: int, dtype: str,
                 load_group: int = 4):
    """Pack the packing granule of B starting at column n0_group.

    For f32/f64 the granule is one nr panel; for f16/i8 one 4-register row
    load spans several panels, so those pack 128/256 columns per call.
    """
    et = elem_type(dtype)
    if et.name == "f16":
        _pack_b_f16_group(machine, b, k0, n0_group, k_act, cols_act,
                          bc_base_group, kc_pad, alloc_cols, load_group)
    elif et.name == "i8":
        _pack_b_i8_group(machine, b, k0, n0_group, k_act, cols_act,
                         bc_base_group, kc_pad, alloc_cols, load_group)
    else:
        _pack_b_rows(machine, b, k0, n0_group, k_act, cols_act,
                     bc_base_group, kc_pad, et, load_group)


def pack_b(b: MatrixView, block, machine: MachineState, bc_base: int,
           kc_pad: int, mode: str = "upfront", load_group: int = 4):
    """Pack a whole (k_act x n_act) block of f32/f64 B into nr panels.

    `online` defers each panel to its first use inside the driver; both modes
    call the identical per-granule packer, so the buffers are bit-identical.
    This entry packs everything immediately and exists for the upfront path
    and for direct testing; block is (k0, n0, k_act, n_act).
    """
    if mode not in ("upfront", "online"):
        raise ValueError("mode must be 'upfront' or 'online'")
    k0, n0, k_act, n_act = block
    et = elem_type(b.dtype)
    svl = machine.config.svl_bits
    nr = 4 * (svl // 8) // et.in_size
    alloc_cols = -(-n_act // nr) * nr
    group = b_group_cols(et, svl)
    for g0 in range(0, alloc_cols, group):
        cols = min(group, n_act - g0)
        pack_b_group(b, k0, n0 + g0, k_act, cols, machine,
                     bc_base + g0 * kc_pad * et.in_size, kc_pad,
                     min(group, alloc_cols - g0), b.dtype, load_group)


def pack_b_f16_zip(b: MatrixView, block, machine: MachineState,
                   bc_base: int, kc_pad: int, load_group: int = 4):
    """Whole-block f16 vertical-interleave packing (ZIP of row pairs)."""
    k0, n0, k_act, n_act = block
    et = elem_type("f16")
    alloc_cols = -(-n_act // 64) * 64
    for g0 in range(0, alloc_cols, 128):
        cols = min(128, n_act - g0)
        _pack_b_f16_group(machine, b, k0, n0 + g0, k_act, cols,
                          bc_base + g0 * kc_pad * et.in_size, kc_pad,
                          min(128, alloc_cols - g0), load_group)


def pack_b_i8(b: MatrixView, block, machine: MachineState,
              bc_base: int, kc_pad: int, load_group: int = 4):
    """Whole-block i8 quad vertical-interleave packing."""
    k0, n0, k_act, n_act = block
    alloc_cols = -(-n_act // 64) * 64
    for g0 in range(0, alloc_cols, 256):
        cols = min(256, n_act - g0)
        _pack_b_i8_group(machine, b, k0, n0 + g0, k_act, cols,
                         bc_base + g0 * kc_pad, kc_pad,
                         min(256, alloc_cols - g0), load_group)


def dump_packed(image: MemoryImage, base: int, nbytes: int, path: str | Path,
                dims: dict):
    """Debug dump: raw little-endian bytes plus a JSON header sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.data[base:base + nbytes].tofile(path)
    Path(str(path) + ".json").write_text(json.dumps(dims, indent=2) + "\n")
