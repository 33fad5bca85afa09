"""Element-type table shared by the machine model, packers, kernels and planner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ElemType:
    """One supported input/accumulator precision pair.

    interleave is the number of consecutive K elements fused into one
    accumulator lane by the widening outer-product decode (1 for the
    non-widening types, 2 for f16, 4 for i8).  k_unit is the K padding
    granule implied by the micro-kernel unroll.
    """

    name: str
    np_in: np.dtype
    np_acc: np.dtype
    in_size: int
    acc_size: int
    k_unit: int
    interleave: int
    mopa: str  # precision tag passed to fmopa/smopa

    @property
    def is_int(self) -> bool:
        return self.name == "i8"


F32 = ElemType("f32", np.dtype("<f4"), np.dtype("<f4"), 4, 4, 16, 1, "f32")
F64 = ElemType("f64", np.dtype("<f8"), np.dtype("<f8"), 8, 8, 16, 1, "f64")
F16 = ElemType("f16", np.dtype("<f2"), np.dtype("<f4"), 2, 4, 32, 2, "f16widen")
I8 = ElemType("i8", np.dtype("<i1"), np.dtype("<i4"), 1, 4, 64, 4, "i8widen")
# i32 exists for C-matrix views of the int8 pipeline, not as a gemm input type
I32 = ElemType("i32", np.dtype("<i4"), np.dtype("<i4"), 4, 4, 16, 1, "")

ELEM_TYPES = {t.name: t for t in (F32, F64, F16, I8, I32)}


def elem_type(name: str) -> ElemType:
    try:
        return ELEM_TYPES[name]
    except KeyError:
        raise ValueError(f"unsupported element type {name!r}; expected one of "
                         f"{sorted(ELEM_TYPES)}") from None
