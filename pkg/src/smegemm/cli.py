"""Workload runner: desk-scale GEMM suites with oracle checks and reports.

Every run initializes the matrices from a seeded generator, executes the
emulated gemm, verifies the result against an independent high-precision
reference, and emits one JSON report plus one table line.  Exit status is
nonzero iff any verdict fails.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .driver import ACC_DTYPE, GemmConfig, RunReport, gemm_on_arrays
from .dtypes import elem_type
from .memsim import SystemProfile
from .tiling import HardwareProfile, explain

# Transformer inference GEMM shapes (M, N, K); ids 1-18 are the wide family,
# 19-24 the skinny-N family.
WORKLOADS = {
    1: (64, 2112, 7168), 2: (64, 24576, 1536), 3: (64, 32768, 512),
    4: (64, 7168, 16384), 5: (64, 4096, 7168), 6: (64, 7168, 2048),
    7: (128, 2112, 7168), 8: (128, 24576, 1536), 9: (128, 32768, 512),
    10: (128, 7168, 16384), 11: (128, 4096, 7168), 12: (128, 7168, 2048),
    13: (4096, 2112, 7168), 14: (4096, 24576, 1536), 15: (4096, 32768, 512),
    16: (4096, 7168, 16384), 17: (4096, 4096, 7168), 18: (4096, 7168, 2048),
    19: (4096, 256, 4096), 20: (11008, 256, 4096), 21: (4096, 256, 11008),
    22: (5120, 256, 5120), 23: (13824, 256, 5120), 24: (5120, 256, 13824),
}

IRREGULAR_MN = (80, 110, 140, 170, 200)
IRREGULAR_K = 2560


def scaled_shape(shape: tuple[int, int, int], scale: int) -> tuple[int, int, int]:
    return tuple(max(1, -(-d // scale)) for d in shape)


def random_inputs(M: int, N: int, K: int, dtype: str, seed: int, beta: float):
    rng = np.random.default_rng(seed)
    et = elem_type(dtype)
    if dtype == "i8":
        a = rng.integers(-128, 128, size=(M, K), dtype=np.int8)
        b = rng.integers(-128, 128, size=(K, N), dtype=np.int8)
        c0 = (rng.integers(-1000, 1000, size=(M, N), dtype=np.int32)
              if beta != 0 else np.zeros((M, N), np.int32))
    else:
        a = (rng.uniform(-1, 1, size=(M, K))).astype(et.np_in)
        b = (rng.uniform(-1, 1, size=(K, N))).astype(et.np_in)
        acc = elem_type(ACC_DTYPE[dtype])
        c0 = (rng.uniform(-1, 1, size=(M, N)).astype(acc.np_in)
              if beta != 0 else np.zeros((M, N), acc.np_in))
    return a, b, c0


def oracle_check(a, b, c0, c_out, alpha, beta, dtype):
    """Independent high-precision reference; returns (ok, max scaled error).

    int8 must match the wrapped int32 reference exactly; floats are compared
    elementwise against the float64 reference, scaled by the product of the
    row/column 2-norms (plus the beta term) to absorb accumulation rounding.
    """
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
    row_n = np.linalg.norm(a64, axis=1)
    col_n = np.linalg.norm(b64, axis=0)
    scale = (abs(alpha) * np.outer(row_n, col_n)
             + abs(beta) * np.abs(c0.astype(np.float64)) + 1e-30)
    err = np.abs(c_out.astype(np.float64) - ref) / scale
    worst = float(err.max()) if err.size else 0.0
    return worst <= tol, worst


def run_one(M, N, K, config: GemmConfig, profile: SystemProfile,
            seed: int) -> tuple[RunReport, np.ndarray]:
    a, b, c0 = random_inputs(M, N, K, config.dtype, seed, config.beta)
    c_out, report = gemm_on_arrays(a, b, c0, config, profile)
    ok, err = oracle_check(a, b, c0, c_out, config.alpha, config.beta,
                           config.dtype)
    report.verdict = "pass" if ok else "FAIL"
    report.max_scaled_err = err
    return report, c_out


def _config_from_args(args, **over) -> GemmConfig:
    kw = dict(dtype=args.dtype, alpha=args.alpha, beta=args.beta,
              layout=args.layout, unit_count=args.units,
              trace_dir=args.trace)
    kw.update(over)
    return GemmConfig(**kw)


def run_workloads(ids, scale, args, profile, out_dir: Path) -> list[RunReport]:
    reports = []
    for wid in ids:
        if wid not in WORKLOADS:
            raise SystemExit(f"unknown workload id {wid}; known: 1..24")
        M, N, K = scaled_shape(WORKLOADS[wid], scale)
        cfg = _config_from_args(args)
        rep, _ = run_one(M, N, K, cfg, profile, args.seed + wid)
        print(f"id={wid:<3}", rep.summary_line())
        rep.write(out_dir / f"workload{wid}_{args.dtype}_{args.layout}.json")
        reports.append(rep)
    return reports


def run_irregular_sweep(args, profile, out_dir: Path) -> list[RunReport]:
    """M, N swept over sizes not divisible by the tile side; K fixed large."""
    reports = []
    for M in IRREGULAR_MN:
        for N in IRREGULAR_MN:
            cfg = _config_from_args(args)
            rep, _ = run_one(M, N, args.sweep_k, cfg, profile,
                             args.seed + M * 1000 + N)
            print(rep.summary_line())
            rep.write(out_dir / f"sweep_{M}x{N}_{args.dtype}.json")
            reports.append(rep)
    return reports


ABLATION_ROWS = (
    ("baseline", dict(blocking_on=False, four_way_loads_on=False,
                      online_pack_on=False)),
    ("+blocking/packing", dict(blocking_on=True, four_way_loads_on=False,
                               online_pack_on=False)),
    ("+4way-loads", dict(blocking_on=True, four_way_loads_on=True,
                         online_pack_on=False)),
    ("+online-pack", dict(blocking_on=True, four_way_loads_on=True,
                          online_pack_on=True)),
)


def run_ablation(M, N, K, args, profile, out_dir: Path) -> list[RunReport]:
    reports = []
    ref_bits = None
    for name, switches in ABLATION_ROWS:
        cfg = _config_from_args(args, **switches)
        rep, c_out = run_one(M, N, K, cfg, profile, args.seed)
        bits = c_out.tobytes()
        if ref_bits is None:
            ref_bits = bits
        elif bits != ref_bits:
            rep.verdict = "FAIL"
        print(f"{name:<20}", rep.summary_line())
        rep.write(out_dir / f"ablation_{name.strip('+').replace('/', '_')}.json")
        reports.append(rep)
    return reports


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="smegemm",
        description="Desk-scale blocked GEMM runner on the emulated matrix engine")
    p.add_argument("--workload", default=None,
                   help="workload id (1..24), comma list, or 'all'")
    p.add_argument("--shape", default=None,
                   help="explicit MxNxK, e.g. 256x256x512")
    p.add_argument("--scale", type=int, default=16,
                   help="divide workload dims by this (default 16)")
    p.add_argument("--dtype", default="f32", choices=("f32", "f64", "f16", "i8"))
    p.add_argument("--layout", default="row", choices=("row", "col"))
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--units", type=int, default=1)
    p.add_argument("--profile", default=None, help="hardware profile JSON file")
    p.add_argument("--ablate", action="store_true",
                   help="run the 4-row optimization breakdown")
    p.add_argument("--sweep-irregular", action="store_true",
                   help="run the irregular M/N sweep")
    p.add_argument("--sweep-k", type=int, default=IRREGULAR_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None,
                   help="directory for per-unit instruction traces")
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--explain-tiling", action="store_true",
                   help="print planner constraint slack and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    profile = (SystemProfile.from_file(args.profile) if args.profile
               else SystemProfile())
    if args.explain_tiling:
        print(explain(HardwareProfile.from_system(profile, args.dtype),
                      args.layout))
        return 0
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reports: list[RunReport] = []
    if args.sweep_irregular:
        reports += run_irregular_sweep(args, profile, out_dir)
    elif args.ablate:
        if args.shape:
            M, N, K = (int(x) for x in args.shape.lower().split("x"))
        elif args.workload:
            M, N, K = scaled_shape(WORKLOADS[int(args.workload)], args.scale)
        else:
            M, N, K = 256, 256, 512
        reports += run_ablation(M, N, K, args, profile, out_dir)
    elif args.shape:
        M, N, K = (int(x) for x in args.shape.lower().split("x"))
        cfg = _config_from_args(args)
        rep, _ = run_one(M, N, K, cfg, profile, args.seed)
        print(rep.summary_line())
        rep.write(out_dir / f"shape_{M}x{N}x{K}_{args.dtype}.json")
        reports.append(rep)
    else:
        if args.workload in (None, "all"):
            ids = sorted(WORKLOADS)
        else:
            ids = [int(x) for x in str(args.workload).split(",")]
        reports += run_workloads(ids, args.scale, args, profile, out_dir)

    failed = [r for r in reports if r.verdict != "pass"]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
