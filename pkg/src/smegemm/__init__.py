"""smegemm: a functional matrix-engine emulator (scalable vectors, predication,
outer-product accumulate tiles), a cache/TLB simulator, and a cache-aware
blocked multi-precision GEMM implemented entirely on the emulated ISA."""

from .driver import (GemmConfig, RunReport, build_problem, gemm, gemm_ablated,
                     gemm_on_arrays, schedule_parallel)
from .machine import (InstrStats, IsaUsageError, MachineConfig, MachineState,
                      PredicateReg, TileView, whilelt)
from .memsim import (CacheConfig, MatrixView, MemFault, MemoryImage, MemStats,
                     MemSystem, SystemProfile, TlbConfig)
from .tiling import (HardwareProfile, PlannerError, TilingParams, cmr,
                     micro_tile_shape, plan, solve_kc, solve_mc_nc, validate)

__version__ = "0.1.0"

__all__ = [
    "GemmConfig", "RunReport", "build_problem", "gemm", "gemm_ablated",
    "gemm_on_arrays", "schedule_parallel",
    "InstrStats", "IsaUsageError", "MachineConfig", "MachineState",
    "PredicateReg", "TileView", "whilelt",
    "CacheConfig", "MatrixView", "MemFault", "MemoryImage", "MemStats",
    "MemSystem", "SystemProfile", "TlbConfig",
    "HardwareProfile", "PlannerError", "TilingParams", "cmr",
    "micro_tile_shape", "plan", "solve_kc", "solve_mc_nc", "validate",
]
