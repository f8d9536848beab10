"""Row-granulated dense matrix multiplication, the reference divisible workload.

Products are accumulated strictly in ascending ``k`` with a separate multiply
and add per term, exactly as the textbook three-loop algorithm does.  The
loops over ``i`` and ``j`` are vectorized, which changes nothing about the
order of floating-point operations for any single output element, so a
product computed block by block is bit-identical to the whole-matrix product.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from tda.errors import DimensionMismatch, PlanMismatch
from tda.scheduler import ScopePlan

WORKLOAD_KIND = "matmul"

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


class Matrix:
    """Dense row-major float64 matrix.  Equality is bit-exact."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise DimensionMismatch(f"matrix data must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix entries must be finite")
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def row_block(self, start: int, stop: int) -> "Matrix":
        return Matrix(self.data[start:stop])

    def tolist(self) -> list[list[float]]:
        return self.data.tolist()

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls(np.eye(n))

    @classmethod
    def random(cls, rows: int, cols: int, seed: int) -> "Matrix":
        return cls(np.array(lcg_uniform(seed, rows * cols), dtype=np.float64).reshape(rows, cols))


def lcg_uniform(seed: int, count: int) -> list[float]:
    """``count`` values in [0, 1) from the 64-bit LCG seeded with ``seed``.

    The state is advanced before each draw; a draw is the top 53 bits of the
    state divided by 2**53.
    """
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state * LCG_MULTIPLIER + LCG_INCREMENT) & _MASK64
        out.append((state >> 11) / 9007199254740992.0)
    return out


def _product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[k]
    return out


def multiply_reference(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise DimensionMismatch(f"cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}")
    return Matrix(_product(a.data, b.data))


def multiply_block(block: Matrix, b: Matrix) -> Matrix:
    """Rows of the product for one row block of the first operand."""
    if block.cols != b.rows:
        raise DimensionMismatch(f"block has {block.cols} columns, operand has {b.rows} rows")
    return Matrix(_product(block.data, b.data))


def split_rows(a: Matrix, plan: ScopePlan, order: Sequence[str] | None = None):
    """Cut ``a`` into contiguous row blocks following ``plan``.

    Returns ``(provider_id, (start, stop), block)`` triples in ``order``
    (default: the plan's own order).  Zero allotments yield empty ranges.
    """
    if plan.total_load != a.rows:
        raise PlanMismatch(f"plan covers {plan.total_load} rows, matrix has {a.rows}")
    order = list(plan.allotments) if order is None else list(order)
    if sorted(order) != sorted(plan.allotments):
        raise PlanMismatch("provider order does not match plan")
    out, start = [], 0
    for pid in order:
        stop = start + plan.allotments[pid]
        out.append((pid, (start, stop), a.row_block(start, stop)))
        start = stop
    return out


def merge_rows(parts) -> Matrix:
    """Concatenate ``((start, stop), block)`` pairs by ascending start."""
    parts = sorted(parts, key=lambda p: p[0][0])
    return Matrix(np.concatenate([blk.data for _, blk in parts], axis=0))


def work_units(request) -> int:
    """Load in rows: accepts a matrix, a ``(rows, cols)`` shape or anything with ``total_load``."""
    if isinstance(request, Matrix):
        return request.rows
    if isinstance(request, tuple):
        return int(request[0])
    return int(request.total_load)


class DivisibleWorkload(Protocol):
    """What a job must offer to be homogenized: splitting, computing and
    merging must commute, i.e. merging the computed pieces of any partition
    equals computing the whole."""

    kind: str

    def split(self, load, plan: ScopePlan) -> list: ...

    def compute(self, chunk): ...

    def merge(self, parts) -> object: ...

    def work_units(self, load) -> int: ...


class MatmulWorkload:
    kind = WORKLOAD_KIND

    def __init__(self, second: Matrix):
        self.second = second

    def split(self, first: Matrix, plan: ScopePlan):
        return [(rng, blk) for _, rng, blk in split_rows(first, plan) if rng[1] > rng[0]]

    def compute(self, chunk):
        rng, blk = chunk
        return rng, multiply_block(blk, self.second)

    def merge(self, parts) -> Matrix:
        return merge_rows(parts)

    def work_units(self, first: Matrix) -> int:
        return first.rows
