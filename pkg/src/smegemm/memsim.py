"""Byte-addressed memory with a set-associative LRU L2 model and an LRU TLB.

The simulator tracks hit/miss statistics only; it has no notion of latency
or bandwidth.  One MemSystem (cache + TLB + counters) belongs to each
simulated compute unit; a MemoryImage additionally carries its own default
MemSystem so it can be used standalone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class MemFault(RuntimeError):
    """Out-of-bounds access or exhausted backing store."""


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int = 16 * 1024 * 1024
    line_bytes: int = 128
    associativity: int = 16

    def __post_init__(self):
        if not _is_pow2(self.line_bytes):
            raise ValueError("line_bytes must be a power of two")
        if self.associativity < 1:
            raise ValueError("associativity must be >= 1")
        if self.capacity_bytes % (self.line_bytes * self.associativity):
            raise ValueError("capacity must be divisible by line_bytes * associativity")

    @property
    def num_sets(self) -> int:
        return self.capacity_bytes // (self.line_bytes * self.associativity)


@dataclass(frozen=True)
class TlbConfig:
    entry_count: int = 256
    page_bytes: int = 16 * 1024

    def __post_init__(self):
        if self.entry_count < 1:
            raise ValueError("entry_count must be >= 1")
        if not _is_pow2(self.page_bytes):
            raise ValueError("page_bytes must be a power of two")


@dataclass
class MemStats:
    l2_hits: int = 0
    l2_misses: int = 0
    tlb_hits: int = 0
    tlb_misses: int = 0
    bytes_read: int = 0
    bytes_written: int = 0

    def merge(self, other: "MemStats") -> "MemStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def copy(self) -> "MemStats":
        return MemStats(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class _LruArray:
    """Array of LRU sets.  Each set is a dict whose insertion order is the
    recency order (oldest first); a hit reinserts the key."""

    def __init__(self, num_sets: int, ways: int):
        self.num_sets = num_sets
        self.ways = ways
        self.sets = [dict() for _ in range(num_sets)]

    def touch(self, key: int, set_index: int) -> bool:
        s = self.sets[set_index]
        if key in s:
            del s[key]
            s[key] = None
            return True
        s[key] = None
        if len(s) > self.ways:
            del s[next(iter(s))]
        return False

    def reset(self):
        for s in self.sets:
            s.clear()


class CacheSim:
    def __init__(self, cfg: CacheConfig):
        self.cfg = cfg
        self._line_shift = cfg.line_bytes.bit_length() - 1
        self._sets = _LruArray(cfg.num_sets, cfg.associativity)
        self._num_sets = cfg.num_sets

    def access_range(self, addr: int, nbytes: int) -> tuple[int, int]:
        """Touch every line overlapping [addr, addr+nbytes); returns (hits, misses)."""
        first = addr >> self._line_shift
        last = (addr + nbytes - 1) >> self._line_shift
        hits = 0
        touch = self._sets.touch
        ns = self._num_sets
        for line in range(first, last + 1):
            if touch(line, line % ns):
                hits += 1
        n = last - first + 1
        return hits, n - hits

    def reset(self):
        self._sets.reset()


class TlbSim:
    """Fully-associative LRU translation buffer."""

    def __init__(self, cfg: TlbConfig):
        self.cfg = cfg
        self._page_shift = cfg.page_bytes.bit_length() - 1
        self._set = _LruArray(1, cfg.entry_count)

    def access_range(self, addr: int, nbytes: int) -> tuple[int, int]:
        first = addr >> self._page_shift
        last = (addr + nbytes - 1) >> self._page_shift
        hits = 0
        touch = self._set.touch
        for page in range(first, last + 1):
            if touch(page, 0):
                hits += 1
        n = last - first + 1
        return hits, n - hits

    def reset(self):
        self._set.reset()


class MemSystem:
    """Cache + TLB + counters for one access stream."""

    def __init__(self, cache: CacheConfig | None = None, tlb: TlbConfig | None = None):
        self.cache_cfg = cache or CacheConfig()
        self.tlb_cfg = tlb or TlbConfig()
        self.cache = CacheSim(self.cache_cfg)
        self.tlb = TlbSim(self.tlb_cfg)
        self.stats = MemStats()

    def access(self, addr: int, nbytes: int, kind: str) -> MemStats:
        """Record one access stream over [addr, addr+nbytes); returns the delta."""
        if nbytes <= 0:
            return MemStats()
        ch, cm = self.cache.access_range(addr, nbytes)
        th, tm = self.tlb.access_range(addr, nbytes)
        s = self.stats
        s.l2_hits += ch
        s.l2_misses += cm
        s.tlb_hits += th
        s.tlb_misses += tm
        if kind == "read":
            s.bytes_read += nbytes
        elif kind == "write":
            s.bytes_written += nbytes
        else:
            raise ValueError(f"kind must be 'read' or 'write', got {kind!r}")
        return MemStats(ch, cm, th, tm,
                        nbytes if kind == "read" else 0,
                        nbytes if kind == "write" else 0)

    def reset_stats(self):
        self.stats = MemStats()

    def snapshot(self) -> MemStats:
        return self.stats.copy()


class MemoryImage:
    """Flat byte memory plus a bump allocator of named, aligned regions."""

    def __init__(self, capacity_bytes: int,
                 cache: CacheConfig | None = None,
                 tlb: TlbConfig | None = None):
        if capacity_bytes <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_bytes
        self.data = np.zeros(capacity_bytes, np.uint8)
        self.regions: dict[str, tuple[int, int]] = {}
        self._next_free = 0
        self.memsys = MemSystem(cache, tlb)

    def alloc_region(self, name: str, nbytes: int, alignment: int = 128) -> int:
        if name in self.regions:
            raise ValueError(f"region {name!r} already allocated")
        if nbytes < 0 or not _is_pow2(alignment):
            raise ValueError("bad region size or alignment")
        base = (self._next_free + alignment - 1) & ~(alignment - 1)
        if base + nbytes > self.capacity:
            raise MemFault(f"image exhausted allocating {name!r} "
                           f"({base + nbytes} > {self.capacity})")
        self._next_free = base + nbytes
        self.regions[name] = (base, nbytes)
        return base

    def check_range(self, addr: int, nbytes: int):
        if addr < 0 or addr + nbytes > self.capacity:
            raise MemFault(f"access [{addr}, {addr + nbytes}) outside image "
                           f"of {self.capacity} bytes")

    def access(self, addr: int, nbytes: int, kind: str) -> MemStats:
        """Simulated access through the image's own MemSystem."""
        self.check_range(addr, nbytes)
        return self.memsys.access(addr, nbytes, kind)

    def reset_stats(self):
        self.memsys.reset_stats()

    def snapshot(self) -> MemStats:
        return self.memsys.snapshot()

    # Direct, unaccounted byte helpers used to stage inputs and read results.
    def write_bytes(self, addr: int, buf: np.ndarray):
        raw = buf.reshape(-1).view(np.uint8)
        self.check_range(addr, raw.size)
        self.data[addr:addr + raw.size] = raw

    def read_bytes(self, addr: int, nbytes: int) -> np.ndarray:
        self.check_range(addr, nbytes)
        return self.data[addr:addr + nbytes].copy()


@dataclass
class MatrixView:
    """Typed 2-D window into a MemoryImage.

    ld is the leading dimension in elements: the stride between consecutive
    rows for row-major storage, between consecutive columns for column-major.
    """

    image: MemoryImage
    base: int
    rows: int
    cols: int
    dtype: str
    order: str = "row"
    ld: int | None = None

    def __post_init__(self):
        from .dtypes import elem_type
        et = elem_type(self.dtype)
        if self.order not in ("row", "col"):
            raise ValueError("order must be 'row' or 'col'")
        contig = self.cols if self.order == "row" else self.rows
        if self.ld is None:
            self.ld = contig
        if self.ld < contig:
            raise ValueError("leading dimension smaller than contiguous extent")
        self.image.check_range(self.base, self.footprint_bytes(et.in_size))

    def footprint_bytes(self, esz: int | None = None) -> int:
        if esz is None:
            from .dtypes import elem_type
            esz = elem_type(self.dtype).in_size
        major = self.rows if self.order == "row" else self.cols
        return major * self.ld * esz

    def elem_addr(self, i: int, j: int, esz: int) -> int:
        if self.order == "row":
            return self.base + (i * self.ld + j) * esz
        return self.base + (j * self.ld + i) * esz

    def transposed(self) -> "MatrixView":
        order = "col" if self.order == "row" else "row"
        return MatrixView(self.image, self.base, self.cols, self.rows,
                          self.dtype, order, self.ld)

    def overlaps(self, other: "MatrixView") -> bool:
        a0, a1 = self.base, self.base + self.footprint_bytes()
        b0, b1 = other.base, other.base + other.footprint_bytes()
        return self.image is other.image and a0 < b1 and b0 < a1

    def to_array(self) -> np.ndarray:
        from .dtypes import elem_type
        et = elem_type(self.dtype)
        n = self.footprint_bytes(et.in_size)
        flat = self.image.data[self.base:self.base + n].view(et.np_in)
        if self.order == "row":
            return flat.reshape(self.rows, self.ld)[:, :self.cols].copy()
        return flat.reshape(self.cols, self.ld)[:, :self.rows].T.copy()

    def from_array(self, arr: np.ndarray):
        from .dtypes import elem_type
        et = elem_type(self.dtype)
        if arr.shape != (self.rows, self.cols):
            raise ValueError("array shape does not match view")
        n = self.footprint_bytes(et.in_size)
        flat = self.image.data[self.base:self.base + n].view(et.np_in)
        if self.order == "row":
            flat.reshape(self.rows, self.ld)[:, :self.cols] = arr.astype(et.np_in)
        else:
            flat.reshape(self.cols, self.ld)[:, :self.rows] = arr.T.astype(et.np_in)


@dataclass
class SystemProfile:
    """Hardware description consumed by the simulator and the tiling planner.

    working_set_bytes is the effective cacheable footprint budget used by the
    planner; it is deliberately independent of the raw L2 capacity.
    """

    l2_capacity_bytes: int = 16 * 1024 * 1024
    l2_line_bytes: int = 128
    l2_associativity: int = 16
    tlb_entries: int = 256
    page_bytes: int = 16 * 1024
    working_set_bytes: int = 8 * 1024 * 1024
    unit_count: int = 1
    svl_bits: int = 512

    def cache_config(self) -> CacheConfig:
        return CacheConfig(self.l2_capacity_bytes, self.l2_line_bytes,
                           self.l2_associativity)

    def tlb_config(self) -> TlbConfig:
        return TlbConfig(self.tlb_entries, self.page_bytes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_file(cls, path: str | Path) -> "SystemProfile":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**raw)

    def to_file(self, path: str | Path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")
