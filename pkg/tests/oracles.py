"""Independent references used by the tests.

Nothing here imports the emulator's compute paths: packing references are
pure index formulas, the LRU reference is a list-based textbook
implementation, and the gemm references are either closed-form
(high precision / wrapped integer) or a scalar-order replay that performs
the same IEEE operations in the same order as the kernel contract.
"""
from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# LRU reference

class RefLru:
    def __init__(self, num_sets: int, ways: int):
        self.sets = [[] for _ in range(num_sets)]
        self.ways = ways

    def touch(self, key: int, set_index: int) -> bool:
        s = self.sets[set_index]
        if key in s:
            s.remove(key)
            s.append(key)
            return True
        s.append(key)
        if len(s) > self.ways:
            s.pop(0)
        return False


def ref_cache_trace(accesses, capacity, line, assoc):
    """(hits, misses) over byte-range accesses for a set-associative LRU."""
    num_sets = capacity // (line * assoc)
    lru = RefLru(num_sets, assoc)
    shift = line.bit_length() - 1
    hits = misses = 0
    for addr, nbytes in accesses:
        for ln in range(addr >> shift, (addr + nbytes - 1 >> shift) + 1):
            if lru.touch(ln, ln % num_sets):
                hits += 1
            else:
                misses += 1
    return hits, misses


# ---------------------------------------------------------------------------
# packing references (pure index formulas over zero-padded blocks)

def pack_a_ref(block: np.ndarray, t_side: int, kc_pad: int, interleave: int) -> np.ndarray:
    """Column-major T-row panels with `interleave` K elements kept adjacent
    per row; returns the flat element array of the packed buffer."""
    m_act, k_act = block.shape
    n_panels = -(-m_act // t_side)
    padded = np.zeros((n_panels * t_side, kc_pad), dtype=block.dtype)
    padded[:m_act, :k_act] = block
    units = kc_pad // interleave
    return (padded.reshape(n_panels, t_side, units, interleave)
            .transpose(0, 2, 1, 3).reshape(-1).copy())


def pack_b_rows_ref(block: np.ndarray, nr: int, kc_pad: int) -> np.ndarray:
    """Row-major kc x nr panels."""
    k_act, n_act = block.shape
    q = -(-n_act // nr)
    padded = np.zeros((kc_pad, q * nr), dtype=block.dtype)
    padded[:k_act, :n_act] = block
    return padded.reshape(kc_pad, q, nr).transpose(1, 0, 2).reshape(-1).copy()


def pack_b_f16_ref(block: np.ndarray, kc_pad: int) -> np.ndarray:
    """32-column sub-blocks of row pairs: [sub-block][pair row][col][2]."""
    k_act, n_act = block.shape
    alloc = -(-n_act // 64) * 64
    padded = np.zeros((kc_pad, alloc), dtype=block.dtype)
    padded[:k_act, :n_act] = block
    return (padded.reshape(kc_pad // 2, 2, alloc // 32, 32)
            .transpose(2, 0, 3, 1).reshape(-1).copy())


def pack_b_i8_ref(block: np.ndarray, kc_pad: int) -> np.ndarray:
    """64-column panels of row quads: [panel][quad row][col][4]."""
    k_act, n_act = block.shape
    alloc = -(-n_act // 64) * 64
    padded = np.zeros((kc_pad, alloc), dtype=block.dtype)
    padded[:k_act, :n_act] = block
    return (padded.reshape(kc_pad // 4, 4, alloc // 64, 64)
            .transpose(2, 0, 3, 1).reshape(-1).copy())


# ---------------------------------------------------------------------------
# gemm references

def naive_check(a, b, c0, c_out, alpha, beta, dtype) -> tuple[bool, float]:
    """High-precision closed-form check, independent of any ordering."""
    if dtype == "i8":
        ref = (int(alpha) * (a.astype(np.int64) @ b.astype(np.int64))
               + int(beta) * c0.astype(np.int64))
        ref = (ref & 0xFFFFFFFF).astype(np.uint32).view(np.int32)
        ok = bool(np.array_equal(ref, c_out))
        return ok, 0.0 if ok else float(np.abs(ref - c_out).max())
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    ref = alpha * (a64 @ b64) + beta * c0.astype(np.float64)
    tol = {"f32": 1e-5, "f64": 1e-13, "f16": 1e-2}[dtype]
    scale = (abs(alpha) * np.outer(np.linalg.norm(a64, axis=1),
                                   np.linalg.norm(b64, axis=0))
             + abs(beta) * np.abs(c0.astype(np.float64)) + 1e-30)
    worst = float((np.abs(c_out.astype(np.float64) - ref) / scale).max())
    return worst <= tol, worst


def _scales(alpha, beta_eff, np_t):
    if alpha == 1.0:
        return np_t(beta_eff), None
    return np_t(beta_eff) / np_t(alpha), np_t(alpha)


def reference_gemm_sameorder(a, b, c0, alpha, beta, kc, k_unit, dtype):
    """Scalar-order replay of the blocked accumulation: per K slab, the
    preload scale, one rounded add per K step (per pair for f16) including
    the zero-padded steps, then the writeback scale."""
    if dtype == "i8":
        ref = (int(alpha) * (a.astype(np.int64) @ b.astype(np.int64))
               + int(beta) * c0.astype(np.int64))
        return (ref & 0xFFFFFFFF).astype(np.uint32).view(np.int32)
    np_t = np.float64 if dtype == "f64" else np.float32
    kdim = a.shape[1]
    c = c0.astype(np_t).copy()
    if alpha == 0.0:
        if beta == 0.0:
            c[:] = np_t(0.0)
        elif beta != 1.0:
            c *= np_t(beta)
        return c
    for k0 in range(0, kdim, kc):
        k_act = min(kc, kdim - k0)
        kc_pad = -(-k_act // k_unit) * k_unit
        pre, post = _scales(alpha, beta if k0 == 0 else 1.0, np_t)
        if pre == 0:
            c[:] = np_t(0.0)
        elif pre != 1:
            c *= pre
        if dtype == "f16":
            a32 = a.astype(np.float32)
            b32 = b.astype(np.float32)
            for p in range(kc_pad // 2):
                if 2 * p >= k_act:
                    c += np_t(0.0)  # fully padded pair
                    continue
                k = k0 + 2 * p
                t1 = a32[:, k, None] * b32[None, k, :]
                if 2 * p + 1 < k_act:
                    t2 = a32[:, k + 1, None] * b32[None, k + 1, :]
                else:
                    t2 = np.zeros_like(t1)
                c += t1 + t2
        else:
            for k in range(k0, k0 + k_act):
                c += a[:, k].astype(np_t)[:, None] * b[k, :].astype(np_t)[None, :]
            for _ in range(kc_pad - k_act):
                c += np_t(0.0)
        if post is not None:
            c *= post
    return c


def random_inputs(rng, M, N, K, dtype, beta):
    if dtype == "i8":
        a = rng.integers(-128, 128, size=(M, K), dtype=np.int8)
        b = rng.integers(-128, 128, size=(K, N), dtype=np.int8)
        c0 = (rng.integers(-1000, 1000, size=(M, N), dtype=np.int32)
              if beta != 0 else np.zeros((M, N), np.int32))
        return a, b, c0
    np_in = {"f32": np.float32, "f64": np.float64, "f16": np.float16}[dtype]
    np_acc = np.float64 if dtype == "f64" else np.float32
    a = rng.uniform(-1, 1, size=(M, K)).astype(np_in)
    b = rng.uniform(-1, 1, size=(K, N)).astype(np_in)
    c0 = (rng.uniform(-1, 1, size=(M, N)).astype(np_acc)
          if beta != 0 else np.zeros((M, N), np_acc))
    return a, b, c0
