"""Main and edge micro-kernels.

The main kernel updates a T x 4T block of C (16 x 64 at svl=512 for 32-bit
accumulation, 8 x 32 for f64) with all four accumulator tiles live:

  preload   Cr rows -> 4-register loads -> horizontal tile slices
            (beta = 1: plain load, beta = 0: tile zeroing, else load + scale)
  k loop    per 4 K-steps: one 4-register load of 4 packed A columns, four
            4-register loads of B rows, then the 16-outer-product ladder
            (A column j against the 4 register segments of B row j)
  writeback horizontal slices -> registers -> 4-register stores, with alpha
            applied on the register path

The edge kernel transposes the roles: a 4T x T block of C, tiles stacked
along M, one 4-register load per packed A panel column group and single-
register B row loads; it exists so N remainders below 4T still drive all
four tiles.

General alpha: for alpha not in {0, 1} the preload scales C by beta/alpha and
the writeback by alpha (exact for the dyadic scales used in practice); the
integer path cannot divide, so alpha != 1 there accumulates into zeroed tiles
and combines alpha*sum + beta*C at writeback, exact under two's-complement
wraparound.  alpha = 0 never reaches a kernel (driver short-circuit).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtypes import ElemType, elem_type
from .machine import MachineState, TileView, whilelt
from .memsim import MemoryImage
from .packing import ld_series, st_series


@dataclass
class MicroTask:
    """One micro-kernel invocation over packed panels and a C sub-block."""

    ar_base: int          # first packed A panel byte
    br_base: int          # packed B panel byte (or raw B address when streaming)
    br_stride: int        # bytes between consecutive K rows of B
    cr_base: int
    ldc_bytes: int
    rows: int             # active C rows
    cols: int             # active C cols
    kc_pad: int           # padded K depth (k_unit multiple)
    k_act: int
    alpha: float = 1.0
    beta_eff: float = 0.0
    b_count: int | None = None   # active B lanes per row when streaming unpacked
    interior: bool = False
    load_group: int = 4


def _float_scales(alpha: float, beta_eff: float, np_acc):
    """(preload scale, writeback scale | None) with the alpha folding trick."""
    if alpha == 1.0:
        return np_acc(beta_eff), None
    return np_acc(beta_eff) / np_acc(alpha), np_acc(alpha)


def _scale_regs(machine: MachineState, first: int, n: int, factor, kind: str):
    sub = machine.reg_view(kind)[first:first + n]
    np.multiply(sub, factor, out=sub, casting="unsafe")


def _combine_int_regs(machine: MachineState, acc_first: int, c_first: int,
                      n: int, alpha: int, beta: int):
    v = machine.reg_view("i32")
    acc = v[acc_first:acc_first + n]
    cc = v[c_first:c_first + n]
    np.multiply(acc, np.int32(alpha), out=acc, casting="unsafe")
    np.multiply(cc, np.int32(beta), out=cc, casting="unsafe")
    np.add(acc, cc, out=acc, casting="unsafe")


def _col_preds(machine, cols: int, t_side: int, acc_w: int):
    preds = []
    for ti in range(4):
        c = min(t_side, max(0, cols - ti * t_side))
        preds.append(None if c == t_side else
                     whilelt(0, c, acc_w, machine.config.svl_bits))
    return preds


def _preload_main(machine, img, t: MicroTask, tiles, t_side, acc_w, pre, kind):
    if pre == 0:
        machine.zero_za(tiles)
        return
    cio = t.cols if t.cols < 4 * t_side else None
    for i in range(t.rows):
        ld_series(machine, img, t.cr_base + i * t.ldc_bytes, 20, 4, acc_w,
                  cio, t.load_group)
        if pre != 1:
            _scale_regs(machine, 20, 4, pre, kind)
        for ti in range(4):
            machine.mova("regs_to_tile", tiles[ti], i, "horizontal", 20 + ti)


def _writeback_main(machine, img, t: MicroTask, tiles, t_side, acc_w, post, kind):
    cio = t.cols if t.cols < 4 * t_side else None
    for i in range(t.rows):
        for ti in range(4):
            machine.mova("tile_to_regs", tiles[ti], i, "horizontal", 20 + ti)
        if post is not None:
            _scale_regs(machine, 20, 4, post, kind)
        st_series(machine, img, t.cr_base + i * t.ldc_bytes, 20, 4, acc_w, cio)


def _float_main(machine: MachineState, img: MemoryImage, t: MicroTask,
                et: ElemType) -> int:
    svl = machine.config.svl_bits
    acc_w = et.acc_size * 8
    t_side = svl // acc_w
    kind = "f32" if acc_w == 32 else "f64"
    tiles = tuple(TileView(acc_w, i) for i in range(4))
    machine.begin_tile_scope()
    rows_pred = None if t.rows == t_side else whilelt(0, t.rows, acc_w, svl)
    col_preds = _col_preds(machine, t.cols, t_side, acc_w)
    pre, post = _float_scales(t.alpha, t.beta_eff, et.np_acc.type)
    _preload_main(machine, img, t, tiles, t_side, acc_w, pre, kind)

    in_w = et.in_size * 8
    col_bytes = t_side * et.in_size
    for kk in range(0, t.kc_pad, 4):
        ld_series(machine, img, t.ar_base + kk * col_bytes, 0, 4, in_w,
                  None, t.load_group)
        for j in range(4):
            k = kk + j
            cnt = None if t.b_count is None else (t.b_count if k < t.k_act else 0)
            ld_series(machine, img, t.br_base + k * t.br_stride, 4 + 4 * j, 4,
                      in_w, cnt, t.load_group)
        for j in range(4):
            for ti in range(4):
                machine.fmopa(tiles[ti], j, 4 + 4 * j + ti, rows_pred,
                              col_preds[ti], et.mopa)

    _writeback_main(machine, img, t, tiles, t_side, acc_w, post, kind)
    return machine.end_tile_scope()


def kernel_f32_main(machine: MachineState, img: MemoryImage, task: MicroTask) -> int:
    """16 x 64 update at svl=512; returns distinct tiles touched."""
    return _float_main(machine, img, task, elem_type("f32"))


def kernel_f64_main(machine: MachineState, img: MemoryImage, task: MicroTask) -> int:
    """8 x 32 f64 variant on four of the eight 64-bit tiles."""
    return _float_main(machine, img, task, elem_type("f64"))


def kernel_f32_edge(machine: MachineState, img: MemoryImage, task: MicroTask) -> int:
    """64 x 16 edge kernel: tiles stacked over M, cols predicated below 16.

    Requires rows == 4T (the dispatcher only emits it when a full 4T row
    group remains); packed A panels are read as four independent column
    streams, B rows as single registers.
    """
    et = elem_type("f32")
    svl = machine.config.svl_bits
    t_side = svl // 32
    if task.rows != 4 * t_side:
        raise ValueError("edge kernel needs a full 4T row group")
    tiles = tuple(TileView(32, i) for i in range(4))
    machine.begin_tile_scope()
    col_pred = None if task.cols == t_side else whilelt(0, task.cols, 32, svl)
    cio = task.cols if task.cols < t_side else None
    pre, post = _float_scales(task.alpha, task.beta_eff, np.float32)

    if pre == 0:
        machine.zero_za(tiles)
    else:
        for r in range(4 * t_side):
            ld_series(machine, img, task.cr_base + r * task.ldc_bytes, 20, 1,
                      32, cio, task.load_group)
            if pre != 1:
                _scale_regs(machine, 20, 1, pre, "f32")
            machine.mova("regs_to_tile", tiles[r // t_side], r % t_side,
                         "horizontal", 20)

    pan_bytes = t_side * task.kc_pad * et.in_size
    for kk in range(0, task.kc_pad, 4):
        for tp in range(4):
            ld_series(machine, img, task.ar_base + tp * pan_bytes + kk * 64,
                      4 * tp, 4, 32, None, task.load_group)
        for j in range(4):
            k = kk + j
            cnt = None if task.b_count is None else \
                (task.b_count if k < task.k_act else 0)
            ld_series(machine, img, task.br_base + k * task.br_stride,
                      16 + j, 1, 32, cnt, task.load_group)
        for j in range(4):
            for ti in range(4):
                machine.fmopa(tiles[ti], 4 * ti + j, 16 + j, None, col_pred,
                              "f32")

    for r in range(4 * t_side):
        machine.mova("tile_to_regs", tiles[r // t_side], r % t_side,
                     "horizontal", 20)
        if post is not None:
            _scale_regs(machine, 20, 1, post, "f32")
        st_series(machine, img, task.cr_base + r * task.ldc_bytes, 20, 1, 32, cio)
    return machine.end_tile_scope()


def kernel_f16_main(machine: MachineState, img: MemoryImage, task: MicroTask) -> int:
    """f16 inputs widening into the four 32-bit tiles.

    A panel columns hold 16 row-attached half pairs (64 bytes); B comes from
    two adjacent 32-column sub-blocks, four pair rows per step.
    """
    et = elem_type("f16")
    svl = machine.config.svl_bits
    t_side = svl // 32
    tiles = tuple(TileView(32, i) for i in range(4))
    machine.begin_tile_scope()
    rows_pred = None if task.rows == t_side else whilelt(0, task.rows, 32, svl)
    col_preds = _col_preds(machine, task.cols, t_side, 32)
    pre, post = _float_scales(task.alpha, task.beta_eff, np.float32)
    _preload_main(machine, img, task, tiles, t_side, 32, pre, "f32")

    sb_bytes = task.kc_pad * 64          # one 32-column sub-block
    vb = svl // 8
    for pp in range(0, task.kc_pad // 2, 4):
        ld_series(machine, img, task.ar_base + pp * vb, 0, 4, 16, None,
                  task.load_group)
        row0 = task.br_base + pp * 2 * vb
        ld_series(machine, img, row0, 4, 4, 16, None, task.load_group)
        ld_series(machine, img, row0 + 4 * vb, 8, 4, 16, None, task.load_group)
        ld_series(machine, img, row0 + sb_bytes, 12, 4, 16, None, task.load_group)
        ld_series(machine, img, row0 + sb_bytes + 4 * vb, 16, 4, 16, None,
                  task.load_group)
        for j in range(4):
            b0 = 4 + 4 * (j // 2) + 2 * (j % 2)
            b1 = 12 + 4 * (j // 2) + 2 * (j % 2)
            machine.fmopa(tiles[0], j, b0, rows_pred, col_preds[0], "f16widen")
            machine.fmopa(tiles[1], j, b0 + 1, rows_pred, col_preds[1], "f16widen")
            machine.fmopa(tiles[2], j, b1, rows_pred, col_preds[2], "f16widen")
            machine.fmopa(tiles[3], j, b1 + 1, rows_pred, col_preds[3], "f16widen")

    _writeback_main(machine, img, task, tiles, t_side, 32, post, "f32")
    return machine.end_tile_scope()


def kernel_i8_main(machine: MachineState, img: MemoryImage, task: MicroTask) -> int:
    """int8 inputs widening into int32; exact two's-complement arithmetic."""
    svl = machine.config.svl_bits
    t_side = svl // 32
    vb = svl // 8
    tiles = tuple(TileView(32, i) for i in range(4))
    machine.begin_tile_scope()
    rows_pred = None if task.rows == t_side else whilelt(0, task.rows, 32, svl)
    col_preds = _col_preds(machine, task.cols, t_side, 32)
    alpha, beta = int(task.alpha), int(task.beta_eff)
    combine = alpha != 1
    cio = task.cols if task.cols < 4 * t_side else None

    if combine or beta == 0:
        machine.zero_za(tiles)
    else:
        for i in range(task.rows):
            ld_series(machine, img, task.cr_base + i * task.ldc_bytes, 20, 4,
                      32, cio, task.load_group)
            if beta != 1:
                _scale_regs(machine, 20, 4, np.int32(beta), "i32")
            for ti in range(4):
                machine.mova("regs_to_tile", tiles[ti], i, "horizontal", 20 + ti)

    for qq in range(0, task.kc_pad // 4, 4):
        ld_series(machine, img, task.ar_base + qq * vb, 0, 4, 8, None,
                  task.load_group)
        for j in range(4):
            ld_series(machine, img, task.br_base + (qq + j) * 4 * vb,
                      4 + 4 * j, 4, 8, None, task.load_group)
        for j in range(4):
            for ti in range(4):
                machine.smopa(tiles[ti], j, 4 + 4 * j + ti, rows_pred,
                              col_preds[ti], "i8widen")

    for i in range(task.rows):
        for ti in range(4):
            machine.mova("tile_to_regs", tiles[ti], i, "horizontal", 20 + ti)
        if combine:
            ld_series(machine, img, task.cr_base + i * task.ldc_bytes, 24, 4,
                      32, cio, task.load_group)
            _combine_int_regs(machine, 20, 24, 4, alpha, beta)
        st_series(machine, img, task.cr_base + i * task.ldc_bytes, 20, 4, 32, cio)
    return machine.end_tile_scope()


def epilogue_writeback(machine: MachineState, img: MemoryImage,
                       tiles, cr_base: int, ldc_bytes: int, rows: int,
                       cols: int, alpha: float, dtype: str = "f32",
                       load_group: int = 4):
    """Standalone ZA -> memory path of the main-kernel geometry with alpha
    applied on the register path; masked lanes of C stay untouched."""
    et = elem_type(dtype)
    acc_w = et.acc_size * 8
    t_side = machine.config.svl_bits // acc_w
    kind = "f32" if acc_w == 32 else "f64"
    post = None if alpha == 1.0 else et.np_acc.type(alpha)
    t = MicroTask(0, 0, 0, cr_base, ldc_bytes, rows, cols, 0, 0,
                  load_group=load_group)
    _writeback_main(machine, img, t, tuple(tiles), t_side, acc_w, post, kind)


def scale_c_inplace(machine: MachineState, img: MemoryImage, cr_base: int,
                    ldc_bytes: int, rows: int, cols: int, beta: float,
                    dtype: str = "f32", load_group: int = 4):
    """Cr = beta * Cr without touching ZA; the alpha = 0 degenerate path."""
    et = elem_type(dtype)
    acc_w = et.acc_size * 8
    t_side = machine.config.svl_bits // acc_w
    kind = {"f32": "f32", "f64": "f64", "i8": "i32", "i32": "i32",
            "f16": "f32"}[dtype]
    per_row = 4 * t_side
    for i in range(rows):
        for c0 in range(0, cols, per_row):
            cnt = min(per_row, cols - c0)
            addr = cr_base + i * ldc_bytes + c0 * et.acc_size
            ld_series(machine, img, addr, 20, 4, acc_w,
                      cnt if cnt < per_row else None, load_group)
            if kind == "i32":
                _scale_regs(machine, 20, 4, np.int32(int(beta)), kind)
            else:
                _scale_regs(machine, 20, 4, et.np_acc.type(beta), kind)
            st_series(machine, img, addr, 20, 4, acc_w,
                      cnt if cnt < per_row else None)


MAIN_KERNELS = {
    "f32": kernel_f32_main,
    "f64": kernel_f64_main,
    "f16": kernel_f16_main,
    "i8": kernel_i8_main,
}
