"""Functional model of one matrix-engine unit.

Models the architectural state the outer-product kernels need: 32 scalable
vector registers, 16 predicate registers, the two-dimensional ZA accumulator
with its per-element-width tile views, and the instruction subset
(grouped loads/stores, FMOPA/SMOPA, tile-slice moves, ZIP, WHILELT,
ZA zeroing).  Everything is bit-deterministic: floating point is IEEE-754
round-to-nearest-even at every multiply and add, integer accumulation wraps
in two's complement.

Conventions that the architecture leaves open and this model fixes:
  * widening products are summed group-internally first, then added to ZA;
  * inactive lanes of a load destination are zeroed;
  * predicates built by whilelt carry an element count, so one predicate can
    govern a whole multi-register group (counter predicates).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .memsim import MemoryImage, MemSystem

TILE_WIDTHS = (8, 16, 32, 64, 128)


class IsaUsageError(ValueError):
    """Operands violate an instruction precondition."""


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class MachineConfig:
    svl_bits: int = 512
    unit_id: int = 0

    def __post_init__(self):
        if self.svl_bits < 128 or not _is_pow2(self.svl_bits):
            raise IsaUsageError("svl_bits must be a power of two >= 128")

    @property
    def svl_bytes(self) -> int:
        return self.svl_bits // 8


@dataclass(frozen=True)
class TileView:
    """A ZA tile selected by element width; tile count equals width/8 bytes."""

    elem_width_bits: int
    tile_index: int
    orientation: str = "horizontal"

    def __post_init__(self):
        if self.elem_width_bits not in TILE_WIDTHS:
            raise IsaUsageError(f"unsupported tile element width {self.elem_width_bits}")
        if not 0 <= self.tile_index < self.elem_width_bits // 8:
            raise IsaUsageError(
                f"tile index {self.tile_index} out of range for "
                f"{self.elem_width_bits}-bit tiles")
        if self.orientation not in ("horizontal", "vertical"):
            raise IsaUsageError("orientation must be horizontal or vertical")


def tile_count(elem_width_bits: int) -> int:
    if elem_width_bits not in TILE_WIDTHS:
        raise IsaUsageError(f"unsupported tile element width {elem_width_bits}")
    return elem_width_bits // 8


def tile_side(elem_width_bits: int, svl_bits: int = 512) -> int:
    return svl_bits // elem_width_bits


class PredicateReg:
    """Per-lane mask at the smallest (byte) granule, optionally with an
    element count so multi-register consumers can be governed by one
    predicate (counter form).  Consumers interpret the first N entries at
    their own element width."""

    __slots__ = ("_mask", "count", "index", "_lanes")

    def __init__(self, mask=None, count: int | None = None,
                 index: int | None = None, svl_bits: int = 512):
        lanes = svl_bits // 8
        self._lanes = lanes
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.size != lanes:
                raise IsaUsageError(f"mask must have {lanes} lanes")
            self._mask = mask
            self.count = count
        elif count is not None:
            self._mask = None  # prefix mask materialized on demand
            self.count = count
        else:
            raise IsaUsageError("predicate needs a mask or a count")
        self.index = index

    @property
    def mask(self) -> np.ndarray:
        if self._mask is None:
            self._mask = np.arange(self._lanes) < max(0, self.count)
        return self._mask

    def __repr__(self):
        if self.count is not None:
            return f"PredicateReg(count={self.count})"
        return f"PredicateReg(active={int(self.mask.sum())}/{self.mask.size})"


def whilelt(start: int, end: int, elem_width: int, svl_bits: int = 512) -> PredicateReg:
    """Predicate with lane k active iff start + k < end.

    The count is kept unclipped so the same predicate can drive a
    multi-register group; single-register consumers clip at their lane count.
    """
    if elem_width not in (8, 16, 32, 64):
        raise IsaUsageError("whilelt element width must be 8/16/32/64")
    return PredicateReg(count=max(0, end - start), svl_bits=svl_bits)


_COUNTER_FIELDS = (
    "loads_g1", "loads_g2", "loads_g4",
    "stores_g1", "stores_g2", "stores_g4",
    "bytes_loaded", "bytes_stored",
    "fmopa_f32", "fmopa_f64", "fmopa_f16w", "fmopa_bf16w",
    "smopa_i8w", "smopa_i16w32", "smopa_i16w64",
    "mova_slices", "zip_ops", "zero_za_ops",
    "flops", "int_ops",
)


@dataclass
class InstrStats:
    loads_g1: int = 0
    loads_g2: int = 0
    loads_g4: int = 0
    stores_g1: int = 0
    stores_g2: int = 0
    stores_g4: int = 0
    bytes_loaded: int = 0
    bytes_stored: int = 0
    fmopa_f32: int = 0
    fmopa_f64: int = 0
    fmopa_f16w: int = 0
    fmopa_bf16w: int = 0
    smopa_i8w: int = 0
    smopa_i16w32: int = 0
    smopa_i16w64: int = 0
    mova_slices: int = 0
    zip_ops: int = 0
    zero_za_ops: int = 0
    flops: int = 0
    int_ops: int = 0

    def merge(self, other: "InstrStats") -> "InstrStats":
        for f in _COUNTER_FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))
        return self

    def copy(self) -> "InstrStats":
        return InstrStats(**self.as_dict())

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in _COUNTER_FIELDS}

    @property
    def loads_total(self) -> int:
        return self.loads_g1 + self.loads_g2 + self.loads_g4

    @property
    def fmopa_total(self) -> int:
        return self.fmopa_f32 + self.fmopa_f64 + self.fmopa_f16w + self.fmopa_bf16w


class MachineState:
    """Register file, ZA storage and event counters of one simulated unit."""

    def __init__(self, config: MachineConfig | None = None,
                 memsys: MemSystem | None = None):
        self.config = config or MachineConfig()
        vb = self.config.svl_bytes
        self.z = np.zeros((32, vb), np.uint8)
        self.za = np.zeros((vb, vb), np.uint8)
        self.p = [PredicateReg(count=vb, index=i, svl_bits=self.config.svl_bits)
                  for i in range(16)]
        self.memsys = memsys or MemSystem()
        self.stats = InstrStats()
        self.trace: list[str] | None = None
        self._tile_scope: set[tuple[int, int]] | None = None

        # Reinterpreting views over the register file and ZA built once;
        # every write through them lands in the backing byte arrays.
        self._zv = {
            "u8": self.z,
            "i8": self.z.view("<i1"),
            "u16": self.z.view("<u2"),
            "i16": self.z.view("<i2"),
            "f16": self.z.view("<f2"),
            "i32": self.z.view("<i4"),
            "f32": self.z.view("<f4"),
            "i64": self.z.view("<i8"),
            "f64": self.z.view("<f8"),
        }
        self._tiles_u8 = {}
        for w in TILE_WIDTHS:
            nt = w // 8
            self._tiles_u8[w] = [self.za[t::nt] for t in range(nt)]
        self._tiles_f32 = [t.view("<f4") for t in self._tiles_u8[32]]
        self._tiles_i32 = [t.view("<i4") for t in self._tiles_u8[32]]
        self._tiles_f64 = [t.view("<f8") for t in self._tiles_u8[64]]
        self._tiles_i64 = [t.view("<i8") for t in self._tiles_u8[64]]

    def reg_view(self, kind: str) -> np.ndarray:
        """Register file reinterpreted as (32, lanes) of the given element
        kind ('u8', 'i8', 'u16', 'i16', 'f16', 'i32', 'f32', 'i64', 'f64')."""
        return self._zv[kind]

    # ------------------------------------------------------------------
    # predicates

    def _resolve(self, pred: PredicateReg | None, total_lanes: int):
        """Returns an int prefix count (fast path) or an index array."""
        if pred is None:
            return total_lanes
        if pred.count is not None:
            return min(max(pred.count, 0), total_lanes)
        m = pred.mask
        if total_lanes <= m.size:
            mm = m[:total_lanes]
        else:
            mm = np.zeros(total_lanes, bool)
            mm[:m.size] = m
        c = int(mm.sum())
        if c == 0:
            return 0
        if mm[:c].all():
            return c
        return np.flatnonzero(mm)

    # ------------------------------------------------------------------
    # memory instructions

    def _check_group(self, group: int, first_reg: int):
        if group not in (1, 2, 4):
            raise IsaUsageError(f"register group must be 1, 2 or 4, got {group}")
        if first_reg < 0 or first_reg + group > 32:
            raise IsaUsageError("register group out of range")

    def ld_multi(self, mem: MemoryImage, base_addr: int, group: int,
                 first_reg: int, elem_width: int,
                 pred: PredicateReg | None = None):
        """Contiguous load of `group` consecutive Z registers.

        Active lanes fill from consecutive memory; inactive lanes are zeroed.
        """
        self._check_group(group, first_reg)
        if elem_width not in (8, 16, 32, 64):
            raise IsaUsageError("load element width must be 8/16/32/64")
        esz = elem_width // 8
        lanes = group * self.config.svl_bits // elem_width
        act = self._resolve(pred, lanes)
        dst = self.z[first_reg:first_reg + group].reshape(-1)
        st = self.stats
        if isinstance(act, (int, np.integer)):
            nbytes = int(act) * esz
            if nbytes:
                mem.check_range(base_addr, nbytes)
                self.memsys.access(base_addr, nbytes, "read")
                dst[:nbytes] = mem.data[base_addr:base_addr + nbytes]
            dst[nbytes:] = 0
            st.bytes_loaded += nbytes
        else:
            dst[:] = 0
            nbytes = act.size * esz
            for lo, hi in _runs(act):
                a = base_addr + lo * esz
                n = (hi - lo) * esz
                mem.check_range(a, n)
                self.memsys.access(a, n, "read")
                dst[lo * esz:hi * esz] = mem.data[a:a + n]
            st.bytes_loaded += nbytes
        if group == 1:
            st.loads_g1 += 1
        elif group == 2:
            st.loads_g2 += 1
        else:
            st.loads_g4 += 1
        if self.trace is not None:
            self.trace.append(f"ld{group} z{first_reg}..z{first_reg + group - 1}"
                              f".w{elem_width} [{base_addr:#x}] bytes={nbytes}")

    def st_multi(self, mem: MemoryImage, base_addr: int, group: int,
                 first_reg: int, elem_width: int,
                 pred: PredicateReg | None = None):
        """Mirror of ld_multi; inactive lanes leave memory unchanged."""
        self._check_group(group, first_reg)
        if elem_width not in (8, 16, 32, 64):
            raise IsaUsageError("store element width must be 8/16/32/64")
        esz = elem_width // 8
        lanes = group * self.config.svl_bits // elem_width
        act = self._resolve(pred, lanes)
        src = self.z[first_reg:first_reg + group].reshape(-1)
        st = self.stats
        if isinstance(act, (int, np.integer)):
            nbytes = int(act) * esz
            if nbytes:
                mem.check_range(base_addr, nbytes)
                self.memsys.access(base_addr, nbytes, "write")
                mem.data[base_addr:base_addr + nbytes] = src[:nbytes]
            st.bytes_stored += nbytes
        else:
            nbytes = act.size * esz
            for lo, hi in _runs(act):
                a = base_addr + lo * esz
                n = (hi - lo) * esz
                mem.check_range(a, n)
                self.memsys.access(a, n, "write")
                mem.data[a:a + n] = src[lo * esz:hi * esz]
            st.bytes_stored += nbytes
        if group == 1:
            st.stores_g1 += 1
        elif group == 2:
            st.stores_g2 += 1
        else:
            st.stores_g4 += 1
        if self.trace is not None:
            self.trace.append(f"st{group} z{first_reg}..z{first_reg + group - 1}"
                              f".w{elem_width} [{base_addr:#x}] bytes={nbytes}")

    # ------------------------------------------------------------------
    # outer products

    def _touch(self, width: int, index: int):
        if self._tile_scope is not None:
            self._tile_scope.add((width, index))

    def fmopa(self, za_tile: TileView, a_reg: int, b_reg: int,
              pred_a: PredicateReg | None = None,
              pred_b: PredicateReg | None = None,
              precision: str = "f32"):
        """Floating-point outer product and accumulate.

        f32/f64: ZA[i][j] += a[i] * b[j] for active (i, j).
        f16widen/bf16widen: lanes are consumed in pairs;
        ZA.S[i][j] += a[2i]*b[2j] + a[2i+1]*b[2j+1], products exact, the pair
        sum and the accumulation each rounded once in FP32.
        """
        svl = self.config.svl_bits
        if precision == "f32":
            self._want_tile(za_tile, 32)
            n = svl // 32
            ra, rb = self._resolve(pred_a, n), self._resolve(pred_b, n)
            av = self._zv["f32"][a_reg]
            bv = self._zv["f32"][b_reg]
            tv = self._tiles_f32[za_tile.tile_index]
            _acc_outer(tv, av, bv, ra, rb)
            self.stats.fmopa_f32 += 1
            self.stats.flops += 2 * n * n
        elif precision == "f64":
            self._want_tile(za_tile, 64)
            n = svl // 64
            ra, rb = self._resolve(pred_a, n), self._resolve(pred_b, n)
            av = self._zv["f64"][a_reg]
            bv = self._zv["f64"][b_reg]
            tv = self._tiles_f64[za_tile.tile_index]
            _acc_outer(tv, av, bv, ra, rb)
            self.stats.fmopa_f64 += 1
            self.stats.flops += 2 * n * n
        elif precision in ("f16widen", "bf16widen"):
            self._want_tile(za_tile, 32)
            n = svl // 32
            ra, rb = self._resolve(pred_a, n), self._resolve(pred_b, n)
            if precision == "f16widen":
                a32 = self._zv["f16"][a_reg].astype(np.float32)
                b32 = self._zv["f16"][b_reg].astype(np.float32)
                self.stats.fmopa_f16w += 1
            else:
                a32 = (self._zv["u16"][a_reg].astype(np.uint32) << 16).view("<f4")
                b32 = (self._zv["u16"][b_reg].astype(np.uint32) << 16).view("<f4")
                self.stats.fmopa_bf16w += 1
            tv = self._tiles_f32[za_tile.tile_index]
            _acc_outer_pairs(tv, a32, b32, ra, rb)
            self.stats.flops += 4 * n * n
        else:
            raise IsaUsageError(f"unknown fmopa precision {precision!r}")
        self._touch(za_tile.elem_width_bits, za_tile.tile_index)
        if self.trace is not None:
            self.trace.append(f"fmopa.{precision} za{za_tile.tile_index}"
                              f" z{a_reg} z{b_reg}")

    def smopa(self, za_tile: TileView, a_reg: int, b_reg: int,
              pred_a: PredicateReg | None = None,
              pred_b: PredicateReg | None = None,
              precision: str = "i8widen"):
        """Signed integer widening outer product; int accumulation wraps.

        i8widen: ZA.S[i][j] += sum_t a[4i+t]*b[4j+t]  (4-way groups)
        i16widen32: 2-way groups into 32-bit tiles.
        i16widen64: 4-way groups into 64-bit tiles.
        """
        svl = self.config.svl_bits
        if precision == "i8widen":
            self._want_tile(za_tile, 32)
            n = svl // 32
            g = 4
            a = self._zv["i8"][a_reg].astype(np.int32).reshape(n, g)
            b = self._zv["i8"][b_reg].astype(np.int32).reshape(n, g)
            tv = self._tiles_i32[za_tile.tile_index]
            self.stats.smopa_i8w += 1
        elif precision == "i16widen32":
            self._want_tile(za_tile, 32)
            n = svl // 32
            g = 2
            a = self._zv["i16"][a_reg].astype(np.int64).reshape(n, g)
            b = self._zv["i16"][b_reg].astype(np.int64).reshape(n, g)
            tv = self._tiles_i32[za_tile.tile_index]
            self.stats.smopa_i16w32 += 1
        elif precision == "i16widen64":
            self._want_tile(za_tile, 64)
            n = svl // 64
            g = 4
            a = self._zv["i16"][a_reg].astype(np.int64).reshape(-1, g)[:n]
            b = self._zv["i16"][b_reg].astype(np.int64).reshape(-1, g)[:n]
            tv = self._tiles_i64[za_tile.tile_index]
            self.stats.smopa_i16w64 += 1
        else:
            raise IsaUsageError(f"unknown smopa precision {precision!r}")
        ra, rb = self._resolve(pred_a, n), self._resolve(pred_b, n)
        ia = isinstance(ra, (int, np.integer))
        ib = isinstance(rb, (int, np.integer))
        asel = a[:ra] if ia else a[ra]
        bsel = b[:rb] if ib else b[rb]
        delta = asel @ bsel.T
        if ia and ib:
            sub = tv[:ra, :rb]
            np.add(sub, delta, out=sub, casting="unsafe")
        else:
            idx = np.ix_(ra if not ia else np.arange(ra), rb if not ib else np.arange(rb))
            tv[idx] = (tv[idx].astype(np.int64) + delta).astype(tv.dtype)
        self.stats.int_ops += 2 * g * n * n
        self._touch(za_tile.elem_width_bits, za_tile.tile_index)
        if self.trace is not None:
            self.trace.append(f"smopa.{precision} za{za_tile.tile_index}"
                              f" z{a_reg} z{b_reg}")

    def _want_tile(self, tile: TileView, width: int):
        if tile.elem_width_bits != width:
            raise IsaUsageError(f"instruction needs a {width}-bit tile, got "
                                f"{tile.elem_width_bits}-bit")

    # ------------------------------------------------------------------
    # moves / permutes / predication

    def mova(self, direction: str, tile: TileView, slice_index: int,
             orientation: str, regs: int | Sequence[int],
             pred: PredicateReg | None = None):
        """Move one or more consecutive tile slices to/from Z registers.

        A horizontal slice i of a w-bit tile is ZA row tile_index + i*(w/8);
        a vertical slice j is the j-th w-bit column of every tile row.  The
        byte array is shared between widths, so 32-bit vertical reads over
        16-bit tile data concatenate the interleaved 16-bit tiles.
        """
        if direction not in ("tile_to_regs", "regs_to_tile"):
            raise IsaUsageError("direction must be tile_to_regs or regs_to_tile")
        if orientation not in ("horizontal", "vertical"):
            raise IsaUsageError("orientation must be horizontal or vertical")
        if isinstance(regs, (int, np.integer)):
            regs = (int(regs),)
        w = tile.elem_width_bits
        if w == 128:
            raise IsaUsageError("128-bit tile views have no slice move")
        esz = w // 8
        side = self.config.svl_bits // w
        if slice_index < 0 or slice_index + len(regs) > side:
            raise IsaUsageError(f"slice range [{slice_index}, "
                                f"{slice_index + len(regs)}) exceeds tile side {side}")
        act = self._resolve(pred, side)
        tu8 = self._tiles_u8[w][tile.tile_index]
        for k, reg in enumerate(regs):
            s = slice_index + k
            zrow = self.z[reg]
            if orientation == "horizontal":
                row = tu8[s]
                if isinstance(act, (int, np.integer)):
                    nb = int(act) * esz
                    if direction == "tile_to_regs":
                        zrow[:nb] = row[:nb]
                    else:
                        row[:nb] = zrow[:nb]
                else:
                    _masked_bytes(zrow, row, act, esz, direction)
            else:
                col = tu8[:, s * esz:(s + 1) * esz]
                zr = zrow.reshape(side, esz)
                if isinstance(act, (int, np.integer)):
                    if direction == "tile_to_regs":
                        zr[:act] = col[:act]
                    else:
                        col[:act] = zr[:act]
                else:
                    if direction == "tile_to_regs":
                        zr[act] = col[act]
                    else:
                        col[act] = zr[act]
        self.stats.mova_slices += len(regs)
        self._touch(w, tile.tile_index)
        if self.trace is not None:
            o = "h" if orientation == "horizontal" else "v"
            self.trace.append(f"mova.{direction[:1]} za{tile.tile_index}.w{w}"
                              f"[{slice_index}+{len(regs)}]{o}")

    def zip_regs(self, src_lo: int, src_hi: int, elem_width: int,
                 dst_lo: int, dst_hi: int):
        """Interleave two registers lane-wise: dst_lo gets the interleave of
        the lower halves (a0,b0,a1,b1,...), dst_hi of the upper halves."""
        if elem_width not in (8, 16, 32, 64):
            raise IsaUsageError("zip element width must be 8/16/32/64")
        key = {8: "i8", 16: "u16", 32: "i32", 64: "i64"}[elem_width]
        zv = self._zv[key]
        a = zv[src_lo].copy()
        b = zv[src_hi].copy()
        n = a.size
        h = n // 2
        lo = zv[dst_lo]
        hi = zv[dst_hi]
        lo[0::2] = a[:h]
        lo[1::2] = b[:h]
        hi[0::2] = a[h:]
        hi[1::2] = b[h:]
        self.stats.zip_ops += 1
        if self.trace is not None:
            self.trace.append(f"zip.w{elem_width} z{dst_lo},z{dst_hi}"
                              f" <- z{src_lo},z{src_hi}")

    def zero_za(self, tiles: Iterable[TileView]):
        for t in tiles:
            self._tiles_u8[t.elem_width_bits][t.tile_index][:] = 0
            self._touch(t.elem_width_bits, t.tile_index)
        self.stats.zero_za_ops += 1
        if self.trace is not None:
            self.trace.append("zero_za")

    def dup_zero(self, first_reg: int, count: int = 1):
        """Clear registers (DUP #0); register-file housekeeping, untracked."""
        self.z[first_reg:first_reg + count] = 0

    def whilelt(self, start: int, end: int, elem_width: int) -> PredicateReg:
        return whilelt(start, end, elem_width, self.config.svl_bits)

    # ------------------------------------------------------------------
    # kernel scoping for the tile-usage counters

    def begin_tile_scope(self):
        self._tile_scope = set()

    def end_tile_scope(self) -> int:
        n = len(self._tile_scope) if self._tile_scope is not None else 0
        self._tile_scope = None
        return n


def _runs(idx: np.ndarray):
    """Contiguous runs [lo, hi) of an ascending index array."""
    if idx.size == 0:
        return
    brk = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], brk + 1))
    ends = np.concatenate((brk, [idx.size - 1]))
    for s, e in zip(starts, ends):
        yield int(idx[s]), int(idx[e]) + 1


def _acc_outer(tv, av, bv, ra, rb):
    ia = isinstance(ra, (int, np.integer))
    ib = isinstance(rb, (int, np.integer))
    if ia and ib:
        if ra == 0 or rb == 0:
            return
        sub = tv[:ra, :rb]
        sub += av[:ra, None] * bv[None, :rb]
    else:
        a_idx = np.arange(ra) if ia else ra
        b_idx = np.arange(rb) if ib else rb
        if len(a_idx) == 0 or len(b_idx) == 0:
            return
        idx = np.ix_(a_idx, b_idx)
        tv[idx] += av[a_idx, None] * bv[None, b_idx]


def _acc_outer_pairs(tv, a32, b32, ra, rb):
    # products of half-precision values are exact in f32; the group sum and
    # the ZA accumulation round once each
    pa, qa = a32[0::2], a32[1::2]
    pb, qb = b32[0::2], b32[1::2]
    ia = isinstance(ra, (int, np.integer))
    ib = isinstance(rb, (int, np.integer))
    if ia and ib:
        if ra == 0 or rb == 0:
            return
        d = pa[:ra, None] * pb[None, :rb]
        d += qa[:ra, None] * qb[None, :rb]
        sub = tv[:ra, :rb]
        sub += d
        return
    a_idx = np.arange(ra) if ia else ra
    b_idx = np.arange(rb) if ib else rb
    if len(a_idx) == 0 or len(b_idx) == 0:
        return
    d = pa[a_idx, None] * pb[None, b_idx]
    d += qa[a_idx, None] * qb[None, b_idx]
    tv[np.ix_(a_idx, b_idx)] += d


def _masked_bytes(zrow, row, idx, esz, direction):
    for lo, hi in _runs(idx):
        if direction == "tile_to_regs":
            zrow[lo * esz:hi * esz] = row[lo * esz:hi * esz]
        else:
            row[lo * esz:hi * esz] = zrow[lo * esz:hi * esz]
