"""Block partitioning for distributed GEMM over a DPU set.

Splits A into N1 row blocks and B into N2 column blocks (held as rows of
B transposed so each block is contiguous), assigns each (i, j) pair to one
DPU, equalizes transferred block sizes through zero padding, and checks
the per-DPU footprint against the placement's capacity. Plans are
immutable metadata: no matrix data is moved here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import (
    BlockTooLargeError,
    DimError,
    DimMismatchError,
    OverAllocationError,
    ValidationError,
)
from .machine import SystemConfig

# WRAM kept back for kernel locals and stack; resident plans must fit the rest.
WRAM_RESERVE_BYTES = 8 * 2**10


class ElemType(Enum):
    FP32 = "fp32"
    INT32 = "int32"
    INT8 = "int8"

    @property
    def nbytes(self) -> int:
        return _ELEM_NBYTES[self]

    @property
    def np_dtype(self):
        return _ELEM_DTYPES[self]


_ELEM_NBYTES = {ElemType.FP32: 4, ElemType.INT32: 4, ElemType.INT8: 1}
_ELEM_DTYPES = {
    ElemType.FP32: np.dtype("<f4"),
    ElemType.INT32: np.dtype("<i4"),
    ElemType.INT8: np.dtype("<i1"),
}


class Layout(Enum):
    ROW_MAJOR = "row_major"
    COL_MAJOR = "col_major"


class Placement(Enum):
    MRAM_STREAM = "mram"
    WRAM_RESIDENT = "wram"


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _round_up(value: int, multiple: int) -> int:
    return _ceil_div(value, multiple) * multiple


def _align_elems(count: int, elem_type: ElemType, alignment: int = 8) -> int:
    """Smallest element count >= count whose byte size is aligned."""
    step = alignment // math.gcd(elem_type.nbytes, alignment)
    return _round_up(count, step)


@dataclass(frozen=True)
class MatrixBuf:
    """Typed 2-D buffer with explicit layout and logical vs padded dims.

    ``data`` is the flat storage of padded_rows x padded_cols elements in
    the declared layout (row-major: rows contiguous; col-major: columns
    contiguous). The pad region is all zeros and the logical region holds
    the matrix values.
    """

    elem_type: ElemType
    logical_rows: int
    logical_cols: int
    padded_rows: int
    padded_cols: int
    layout: Layout
    data: np.ndarray

    def __post_init__(self):
        if self.logical_rows < 1 or self.logical_cols < 1:
            raise DimError(
                f"matrix dims must be positive, got {self.logical_rows}x{self.logical_cols}")
        if self.padded_rows < self.logical_rows or self.padded_cols < self.logical_cols:
            raise ValidationError("padded dims must cover logical dims")
        if self.data.dtype != self.elem_type.np_dtype:
            raise ValidationError(
                f"data dtype {self.data.dtype} does not match {self.elem_type}")
        if self.data.size != self.padded_rows * self.padded_cols:
            raise ValidationError("data size does not match padded dims")

    @classmethod
    def from_array(cls, arr, elem_type: ElemType, layout: Layout = Layout.ROW_MAJOR) -> "MatrixBuf":
        arr = np.asarray(arr, dtype=elem_type.np_dtype)
        if arr.ndim != 2:
            raise DimError("expected a 2-D array")
        rows, cols = arr.shape
        if layout is Layout.ROW_MAJOR:
            flat = np.ascontiguousarray(arr).reshape(-1)
        else:
            flat = np.ascontiguousarray(arr.T).reshape(-1)
        return cls(elem_type, rows, cols, rows, cols, layout, flat.copy())

    def grid(self) -> np.ndarray:
        """Full padded matrix as a 2-D array indexed [row, col]."""
        if self.layout is Layout.ROW_MAJOR:
            return self.data.reshape(self.padded_rows, self.padded_cols)
        return self.data.reshape(self.padded_cols, self.padded_rows).T

    def to_array(self) -> np.ndarray:
        """Logical region as a 2-D array (padding cropped)."""
        return self.grid()[: self.logical_rows, : self.logical_cols].copy()

    def element(self, r: int, c: int):
        return self.grid()[r, c]

    @property
    def major_run_elems(self) -> int:
        """Elements in one contiguous storage run (a row, or a column if col-major)."""
        return self.padded_cols if self.layout is Layout.ROW_MAJOR else self.padded_rows

    @property
    def nbytes(self) -> int:
        return self.data.size * self.elem_type.nbytes

    def validate_padding(self) -> bool:
        """True when every pad cell is zero (O(n); meant for tests)."""
        g = self.grid()
        right = g[:, self.logical_cols:]
        below = g[self.logical_rows:, :]
        return not right.any() and not below.any()


def transpose_layout(m: MatrixBuf) -> MatrixBuf:
    """Re-store a buffer in the opposite layout; every element (r, c) is kept.

    Row-major in, column-major out (each column becomes one contiguous
    run, i.e. the storage of the transposed matrix) and vice versa, so
    applying it twice restores the original storage byte-for-byte.
    """
    grid = m.grid()
    new_layout = Layout.COL_MAJOR if m.layout is Layout.ROW_MAJOR else Layout.ROW_MAJOR
    if new_layout is Layout.ROW_MAJOR:
        flat = np.ascontiguousarray(grid).reshape(-1)
    else:
        flat = np.ascontiguousarray(grid.T).reshape(-1)
    return MatrixBuf(m.elem_type, m.logical_rows, m.logical_cols,
                     m.padded_rows, m.padded_cols, new_layout, flat)


def pad_matrix(m: MatrixBuf, row_multiple: int) -> MatrixBuf:
    """Zero-pad so blocks transfer cleanly: rows to a multiple, runs to 8 bytes.

    Rows are padded up to ``row_multiple``; then the minor dimension of
    each contiguous storage run is padded so its byte length is a
    multiple of 8 (the DMA granularity). For col-major buffers the runs
    are columns, so the row count absorbs both constraints.
    """
    if row_multiple < 1:
        raise ValidationError("row_multiple must be >= 1")
    rows = _round_up(m.logical_rows, row_multiple)
    cols = m.logical_cols
    if m.layout is Layout.ROW_MAJOR:
        cols = _align_elems(cols, m.elem_type)
    else:
        step = 8 // math.gcd(m.elem_type.nbytes, 8)
        lcm = row_multiple * step // math.gcd(row_multiple, step)
        rows = _round_up(m.logical_rows, lcm)
    grid = np.zeros((rows, cols), dtype=m.elem_type.np_dtype)
    grid[: m.logical_rows, : m.logical_cols] = m.grid()[: m.logical_rows, : m.logical_cols]
    if m.layout is Layout.ROW_MAJOR:
        flat = grid.reshape(-1)
    else:
        flat = np.ascontiguousarray(grid.T).reshape(-1)
    return MatrixBuf(m.elem_type, m.logical_rows, m.logical_cols,
                     rows, cols, m.layout, flat)


def replication_rate(dim_a: int, dim_b: int, n1: int, n2: int) -> float:
    """Memory replication percentage for an (N1, N2) split.

    A's blocks land on N2 DPUs each and B's on N1, so the data resident
    across the set is (dimA*N2 + dimB*N1) elements against an
    unreplicated footprint of dimA + dimB. Evaluated in exact rational
    arithmetic before the final float conversion.
    """
    if min(dim_a, dim_b, n1, n2) < 1:
        raise ValidationError("replication_rate inputs must be >= 1")
    rate = Fraction(dim_a * n2 + dim_b * n1, dim_a + dim_b) * 100
    return float(rate)


def tasklet_rows(c_rows: int, n1: int, t: int) -> int:
    """Rows handled by each of T tasklets for blocks of ceil(C/N1) rows."""
    if min(c_rows, n1, t) < 1:
        raise ValidationError("tasklet_rows inputs must be >= 1")
    return _ceil_div(_ceil_div(c_rows, n1), t)


@dataclass(frozen=True)
class PartitionPlan:
    """Immutable description of one distributed GEMM execution.

    Row ranges cover A exactly once and column ranges cover B exactly
    once; the assignment maps each DPU to its (i, j) block pair. Byte
    sizes are the padded, transfer-equalized block sizes; offsets give
    the MRAM layout [A | B | C] used by the executor and kernels.
    """

    n1: int
    n2: int
    tasklets: int
    tasklet_rows: int
    elem_type: ElemType
    placement: Placement
    c_rows: int                      # total rows of A
    k: int                           # inner dimension (A cols == B rows)
    b_cols: int
    a_block_ranges: tuple[tuple[int, int], ...]
    b_block_ranges: tuple[tuple[int, int], ...]
    assignment: tuple[tuple[int, int], ...]   # dpu ordinal -> (i, j)
    replication_rate_pct: float
    a_block_rows: int
    b_block_cols: int
    padded_k: int
    c_pad_cols: int
    a_block_bytes: int
    b_block_bytes: int
    c_block_bytes: int
    chunk_k: int                     # K elements staged per WRAM chunk

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def per_dpu_bytes(self) -> int:
        return self.a_block_bytes + self.b_block_bytes + self.c_block_bytes

    @property
    def a_offset(self) -> int:
        return 0

    @property
    def b_offset(self) -> int:
        return self.a_block_bytes

    @property
    def c_offset(self) -> int:
        return self.a_block_bytes + self.b_block_bytes

    def block_pair(self, dpu_ordinal: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """Logical (A row range, B col range) handled by one DPU."""
        i, j = self.assignment[dpu_ordinal]
        return self.a_block_ranges[i], self.b_block_ranges[j]

    def logical_elements_per_dpu(self) -> list[int]:
        """Unpadded A+B elements resident on each DPU (for replication audits)."""
        out = []
        for i, j in self.assignment:
            a_lo, a_hi = self.a_block_ranges[i]
            b_lo, b_hi = self.b_block_ranges[j]
            out.append((a_hi - a_lo) * self.k + (b_hi - b_lo) * self.k)
        return out


def _block_ranges(total: int, parts: int) -> tuple[tuple[int, int], ...]:
    # ceil-sized blocks, smaller last block; trailing blocks may be empty
    # when parts is close to total (their DPUs hold only padding)
    size = _ceil_div(total, parts)
    ranges = []
    for i in range(parts):
        lo = min(i * size, total)
        hi = min(lo + size, total)
        ranges.append((lo, hi))
    return tuple(ranges)


def plan_dims(a_rows: int, k: int, b_cols: int, elem_type: ElemType,
              n1: int, n2: int, tasklets: int, placement: Placement,
              config: SystemConfig | None = None) -> PartitionPlan:
    """Build and capacity-check a plan from matrix dimensions alone.

    This is the planning engine behind `make_plan`; the cost model uses
    it directly so sweeps never materialize matrix data.
    """
    config = config or SystemConfig()
    if min(a_rows, k, b_cols) < 1:
        raise DimError("matrix dims must be positive")
    if n1 < 1 or n2 < 1:
        raise ValidationError("N1 and N2 must be >= 1")
    if n1 > a_rows:
        raise DimMismatchError(f"N1={n1} exceeds A's {a_rows} rows")
    if n2 > b_cols:
        raise DimMismatchError(f"N2={n2} exceeds B's {b_cols} columns")
    if n1 * n2 > config.total_dpus:
        raise OverAllocationError(
            f"plan needs {n1 * n2} DPUs, system has {config.total_dpus}")
    if not (1 <= tasklets <= config.max_tasklets):
        raise ValidationError(
            f"tasklets must be in [1, {config.max_tasklets}], got {tasklets}")
    if placement is Placement.WRAM_RESIDENT and n2 != 1:
        raise ValidationError(
            "WRAM-resident placement replicates B on every DPU; N2 must be 1")

    esize = elem_type.nbytes
    a_block_rows = _ceil_div(a_rows, n1)
    b_block_cols = _ceil_div(b_cols, n2)
    padded_k = _align_elems(k, elem_type)
    c_pad_cols = _align_elems(b_block_cols, elem_type)
    a_block_bytes = a_block_rows * padded_k * esize
    b_block_bytes = b_block_cols * padded_k * esize
    c_block_bytes = a_block_rows * c_pad_cols * esize

    per_dpu = a_block_bytes + b_block_bytes + c_block_bytes
    if placement is Placement.WRAM_RESIDENT:
        usable = config.wram_capacity - WRAM_RESERVE_BYTES
        if per_dpu > usable:
            raise BlockTooLargeError("WRAM", per_dpu, usable,
                                     f"A {a_block_bytes} + B {b_block_bytes} + C {c_block_bytes} B")
    if per_dpu > config.mram_capacity:
        raise BlockTooLargeError("MRAM", per_dpu, config.mram_capacity,
                                 f"A {a_block_bytes} + B {b_block_bytes} + C {c_block_bytes} B")

    # Streaming staging chunk: one A-row chunk + one B^T-row chunk + one C row
    # must share the usable WRAM.
    usable_wram = config.wram_capacity - WRAM_RESERVE_BYTES
    c_row_bytes = c_pad_cols * esize
    chunk_bytes = (usable_wram - c_row_bytes) // 2
    chunk_bytes -= chunk_bytes % 8
    row_bytes = padded_k * esize
    chunk_bytes = min(chunk_bytes, row_bytes)
    if chunk_bytes < 8:
        raise BlockTooLargeError("WRAM", c_row_bytes + 16, usable_wram,
                                 "one C row leaves no room for streaming chunks")
    chunk_k = chunk_bytes // esize

    assignment = tuple((i, j) for i in range(n1) for j in range(n2))
    rate = replication_rate(a_rows * k, k * b_cols, n1, n2)
    return PartitionPlan(
        n1=n1, n2=n2, tasklets=tasklets,
        tasklet_rows=tasklet_rows(a_rows, n1, tasklets),
        elem_type=elem_type, placement=placement,
        c_rows=a_rows, k=k, b_cols=b_cols,
        a_block_ranges=_block_ranges(a_rows, n1),
        b_block_ranges=_block_ranges(b_cols, n2),
        assignment=assignment,
        replication_rate_pct=rate,
        a_block_rows=a_block_rows, b_block_cols=b_block_cols,
        padded_k=padded_k, c_pad_cols=c_pad_cols,
        a_block_bytes=a_block_bytes, b_block_bytes=b_block_bytes,
        c_block_bytes=c_block_bytes, chunk_k=chunk_k,
    )


def make_plan(a: MatrixBuf, b: MatrixBuf, n1: int, n2: int, tasklets: int,
              placement: Placement, config: SystemConfig | None = None) -> PartitionPlan:
    """Plan the distributed multiplication of two concrete buffers."""
    if a.elem_type is not b.elem_type:
        raise DimMismatchError(
            f"element types differ: {a.elem_type.value} vs {b.elem_type.value}")
    if a.logical_cols != b.logical_rows:
        raise DimMismatchError(
            f"inner dims differ: A is {a.logical_rows}x{a.logical_cols}, "
            f"B is {b.logical_rows}x{b.logical_cols}")
    return plan_dims(a.logical_rows, a.logical_cols, b.logical_cols, a.elem_type,
                     n1, n2, tasklets, placement, config)


def first_feasible_split(n: int, a_rows: int, k: int, b_cols: int, elem_type: ElemType,
                         tasklets: int, placement: Placement,
                         config: SystemConfig | None = None,
                         preferred: tuple[int, int] | None = None,
                         allow_fewer: bool = False) -> PartitionPlan:
    """Deterministic feasibility chooser: the first (N1, N2) split that fits.

    Tries the preferred split, then divisor pairs of ``n`` by ascending
    N2, so B is split only as much as capacity demands. With
    ``allow_fewer``, splits of smaller DPU counts are tried next (for
    layers too small to occupy the whole allocation). This picks a valid
    layout, not a runtime optimum; searching for minimum cost is the
    sweep's job.
    """
    config = config or SystemConfig()
    candidates: list[tuple[int, int]] = []
    if preferred is not None:
        candidates.append(preferred)
    counts = range(n, 0, -1) if allow_fewer else (n,)
    for count in counts:
        for n2 in range(1, count + 1):
            if count % n2 == 0:
                candidates.append((count // n2, n2))
    last_error: Exception | None = None
    for n1, n2 in candidates:
        try:
            return plan_dims(a_rows, k, b_cols, elem_type, n1, n2,
                             tasklets, placement, config)
        except (BlockTooLargeError, DimMismatchError, ValidationError) as exc:
            last_error = exc
    if isinstance(last_error, BlockTooLargeError):
        raise BlockTooLargeError(
            last_error.capacity_name, last_error.required, last_error.available,
            f"no (N1, N2) split of {n} DPUs fits {a_rows}x{k} @ {k}x{b_cols}")
    raise BlockTooLargeError(
        "MRAM" if placement is Placement.MRAM_STREAM else "WRAM",
        n, n, f"no feasible (N1, N2) split of {n} DPUs: {last_error}")
