"""Partitioning: layout transforms, padding, replication, plan validity."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimsim.errors import (
    BlockTooLargeError,
    DimMismatchError,
    OverAllocationError,
    ValidationError,
)
from pimsim.machine import SystemConfig
from pimsim.planner import (
    ElemType,
    Layout,
    MatrixBuf,
    Placement,
    WRAM_RESERVE_BYTES,
    first_feasible_split,
    make_plan,
    pad_matrix,
    plan_dims,
    replication_rate,
    tasklet_rows,
    transpose_layout,
)


def _buf(arr, et=ElemType.FP32, layout=Layout.ROW_MAJOR):
    return MatrixBuf.from_array(np.asarray(arr, dtype=et.np_dtype), et, layout)


# -- transpose ---------------------------------------------------------------

def test_transpose_single_element():
    b = transpose_layout(_buf([[5.0]]))
    assert b.layout is Layout.COL_MAJOR
    assert b.data.tolist() == [5.0]


def test_transpose_storage_order():
    b = transpose_layout(_buf([[1, 2, 3], [4, 5, 6]]))
    assert b.data.tolist() == [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]
    assert (b.logical_rows, b.logical_cols) == (2, 3)
    assert b.element(1, 2) == 6.0


@settings(max_examples=50, deadline=None)
@given(rows=st.integers(1, 12), cols=st.integers(1, 12),
       seed=st.integers(0, 2**16))
def test_transpose_involution(rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = _buf(rng.random((rows, cols), dtype=np.float32))
    twice = transpose_layout(transpose_layout(m))
    assert twice.layout is m.layout
    assert np.array_equal(twice.data, m.data)


# -- padding -----------------------------------------------------------------

def test_pad_fp32_rows_to_even():
    p = pad_matrix(_buf(np.arange(12, dtype=np.float32).reshape(3, 4)), 2)
    assert (p.padded_rows, p.padded_cols) == (4, 4)
    assert p.grid()[3].tolist() == [0.0] * 4
    assert np.array_equal(p.to_array(), np.arange(12, dtype=np.float32).reshape(3, 4))


def test_pad_already_conformant():
    m = _buf(np.ones((4, 4), dtype=np.float32))
    p = pad_matrix(m, 2)
    assert (p.padded_rows, p.padded_cols) == (4, 4)
    assert np.array_equal(p.data, m.data)


def test_pad_int8_row_bytes_to_eight():
    p = pad_matrix(_buf(np.ones((5, 5)), ElemType.INT8), 1)
    assert (p.padded_rows, p.padded_cols) == (5, 8)
    assert p.padded_cols * ElemType.INT8.nbytes % 8 == 0


def test_pad_col_major_pads_rows_for_alignment():
    m = transpose_layout(_buf(np.ones((5, 3), dtype=np.float32)))
    p = pad_matrix(m, 2)
    # col-major runs are columns: rows must satisfy both the multiple and 8B rule
    assert p.padded_rows % 2 == 0
    assert p.padded_rows * 4 % 8 == 0
    assert p.validate_padding()


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 20), cols=st.integers(1, 20),
       mult=st.integers(1, 4),
       et=st.sampled_from(list(ElemType)))
def test_padding_neutrality(rows, cols, mult, et):
    # multiplying padded matrices and cropping equals multiplying the originals
    rng = np.random.default_rng(rows * 100 + cols)
    if et is ElemType.FP32:
        a = rng.random((rows, cols), dtype=np.float32)
        b = rng.random((cols, 3), dtype=np.float32)
    else:
        a = rng.integers(-5, 5, (rows, cols)).astype(et.np_dtype)
        b = rng.integers(-5, 5, (cols, 3)).astype(et.np_dtype)
    pa = pad_matrix(_buf(a, et), mult)
    pb = pad_matrix(_buf(b, et), mult)
    assert pa.validate_padding() and pb.validate_padding()
    acc = np.float64 if et is ElemType.FP32 else np.int64
    # zero-extend both to a shared inner dim: padding contributes nothing
    kdim = max(pa.padded_cols, pb.padded_rows)
    left = np.zeros((pa.padded_rows, kdim), dtype=acc)
    left[:, : pa.padded_cols] = pa.grid()
    right = np.zeros((kdim, pb.padded_cols), dtype=acc)
    right[: pb.padded_rows] = pb.grid()
    cropped = (left @ right)[:rows, : b.shape[1]]
    direct = a.astype(acc) @ b.astype(acc)
    assert np.allclose(cropped, direct)


# -- replication rate ---------------------------------------------------------

def test_replication_no_split():
    assert replication_rate(10, 10, 1, 1) == 100.0


def test_replication_symmetric_double():
    assert replication_rate(512, 512, 2, 2) == 200.0


def test_replication_eq3_example():
    assert replication_rate(1000, 3000, 4, 1) == 325.0


def test_replication_exact_rational():
    # 1/3-style ratios survive exact arithmetic before the final float
    r = replication_rate(1, 2, 2, 1)
    assert r == float(Fraction(1 * 1 + 2 * 2, 3) * 100)


# -- tasklet rows --------------------------------------------------------------

def test_tasklet_rows_one_per_thread():
    assert tasklet_rows(16, 1, 16) == 1


def test_tasklet_rows_net1_batch():
    assert tasklet_rows(9984, 4, 16) == 156


def test_tasklet_rows_small_block():
    assert tasklet_rows(10, 3, 16) == 1


@settings(max_examples=100, deadline=None)
@given(c=st.integers(1, 500), n1=st.integers(1, 16), t=st.integers(1, 24))
def test_tasklet_rows_cover_block(c, n1, t):
    block = -(-c // n1)
    per = tasklet_rows(c, n1, t)
    # T tasklets at tasklet_rows each cover the block, and not wastefully
    assert per * t >= block
    if block >= t:
        assert (per - 1) * t < block


# -- plans ---------------------------------------------------------------------

def test_make_plan_symmetric_split():
    a = _buf(np.ones((4, 4), dtype=np.float32))
    b = _buf(np.ones((4, 4), dtype=np.float32))
    plan = make_plan(a, b, 2, 2, 16, Placement.MRAM_STREAM)
    assert plan.n == 4
    assert plan.a_block_rows == 2 and plan.b_block_cols == 2
    assert plan.a_block_ranges == ((0, 2), (2, 4))
    assert plan.b_block_ranges == ((0, 2), (2, 4))
    assert sorted(plan.assignment) == [(i, j) for i in range(2) for j in range(2)]


def test_make_plan_net2_wram_too_large():
    with pytest.raises(BlockTooLargeError) as exc_info:
        plan_dims(16384, 16384, 4096, ElemType.FP32, 2048, 1, 16,
                  Placement.WRAM_RESIDENT)
    assert exc_info.value.capacity_name == "WRAM"
    assert "WRAM" in str(exc_info.value)


def test_make_plan_coverage_12_dpus():
    a = _buf(np.ones((100, 50), dtype=np.float32))
    b = _buf(np.ones((50, 60), dtype=np.float32))
    plan = make_plan(a, b, 4, 3, 16, Placement.MRAM_STREAM)
    assert len(set(plan.assignment)) == 12
    covered = sorted(r for lo, hi in plan.a_block_ranges for r in range(lo, hi))
    assert covered == list(range(100))
    covered_cols = sorted(c for lo, hi in plan.b_block_ranges for c in range(lo, hi))
    assert covered_cols == list(range(60))


def test_make_plan_dim_mismatch():
    a = _buf(np.ones((4, 5), dtype=np.float32))
    b = _buf(np.ones((4, 4), dtype=np.float32))
    with pytest.raises(DimMismatchError):
        make_plan(a, b, 1, 1, 16, Placement.MRAM_STREAM)


def test_make_plan_too_many_dpus():
    a = _buf(np.ones((100, 4), dtype=np.float32))
    b = _buf(np.ones((4, 100), dtype=np.float32))
    with pytest.raises(OverAllocationError):
        make_plan(a, b, 100, 100, 16, Placement.MRAM_STREAM,
                  SystemConfig(total_dpus=64))


def test_wram_resident_forces_single_b_block():
    with pytest.raises(ValidationError):
        plan_dims(16, 8, 8, ElemType.FP32, 2, 2, 16, Placement.WRAM_RESIDENT)


def test_wram_resident_fits_small_blocks():
    plan = plan_dims(64, 112, 96, ElemType.FP32, 16, 1, 16, Placement.WRAM_RESIDENT)
    assert plan.per_dpu_bytes <= 64 * 2**10 - WRAM_RESERVE_BYTES


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 64), k=st.integers(1, 32), cols=st.integers(1, 64),
       n1=st.integers(1, 8), n2=st.integers(1, 8),
       et=st.sampled_from(list(ElemType)))
def test_replication_accounting_exact(rows, k, cols, n1, n2, et):
    if n1 > rows or n2 > cols:
        return
    plan = plan_dims(rows, k, cols, et, n1, n2, 16, Placement.MRAM_STREAM)
    # each A block on exactly N2 DPUs, each B block on exactly N1
    a_counts = [0] * n1
    b_counts = [0] * n2
    for i, j in plan.assignment:
        a_counts[i] += 1
        b_counts[j] += 1
    assert all(c == n2 for c in a_counts)
    assert all(c == n1 for c in b_counts)
    dim_a, dim_b = rows * k, k * cols
    assert sum(plan.logical_elements_per_dpu()) == dim_a * n2 + dim_b * n1
    assert plan.replication_rate_pct == float(
        Fraction(dim_a * n2 + dim_b * n1, dim_a + dim_b) * 100)


def test_first_feasible_prefers_given_split():
    plan = first_feasible_split(8, 64, 16, 16, ElemType.FP32, 16,
                                Placement.MRAM_STREAM, preferred=(2, 4))
    assert (plan.n1, plan.n2) == (2, 4)


def test_first_feasible_falls_back():
    # preferred split violates N2 <= cols; falls back to N2=1
    plan = first_feasible_split(8, 64, 16, 1, ElemType.FP32, 16,
                                Placement.MRAM_STREAM, preferred=(2, 4))
    assert (plan.n1, plan.n2) == (8, 1)
