"""DPU-side compute routines executed inside the simulator.

Kernels are host-side functions registered by name; the machine invokes
each once per DPU with a checked memory view and the DPU's tasklet
count. Work is split into per-tasklet row ranges, so results never
depend on how many tasklets run.

Arithmetic contract shared by every GEMM path: each output element is a
single double-precision dot product over the logical inner dimension,
narrowed to the output element type (integer paths accumulate in 64-bit
with wrap-around). Both placement variants and the host reference use
this same element rule, which makes outputs bit-identical across
tasklet counts, placements, and partition choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .machine import DpuView, KernelRef, TransferKind
from .planner import ElemType

# ---------------------------------------------------------------------------
# Fast exponential
# ---------------------------------------------------------------------------
# e**x approximated by writing an affine function of x into the high 32 bits
# of an IEEE-754 double, so the exponent field gets x/ln2 and the mantissa
# picks up the fractional part linearly. Constants are frozen: tests and
# oracles rely on the exact bit pattern.
#
#   FAST_EXP_SCALE = 2**20 / ln 2      maps x to exponent-field units
#   FAST_EXP_BIAS  = 1023 << 20        IEEE-754 double exponent bias
#   FAST_EXP_SHIFT = 20000             downward correction balancing the
#                                      linear-mantissa overshoot: max relative
#                                      error 4.76% on [-10, 10], 0.96% at x=0,
#                                      monotone non-decreasing everywhere.
FAST_EXP_SCALE = 1048576.0 / math.log(2.0)
FAST_EXP_BIAS = 1072693248
FAST_EXP_SHIFT = 20000

# Inputs are clamped to this range; below it the result is 0, above it the
# float32 infinity sentinel.
FAST_EXP_MAX_INPUT = 87.0


def fast_exp(x):
    """Bit-manipulation exponential, float32 in/out; accepts scalars or arrays."""
    scalar = np.isscalar(x) or getattr(x, "ndim", 1) == 0
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    lo, hi = xv.min(), xv.max()
    clipped = np.clip(xv, -FAST_EXP_MAX_INPUT, FAST_EXP_MAX_INPUT) \
        if (lo < -FAST_EXP_MAX_INPUT or hi > FAST_EXP_MAX_INPUT) else xv
    i = np.floor(FAST_EXP_SCALE * clipped + (FAST_EXP_BIAS - FAST_EXP_SHIFT)).astype(np.int64)
    out = (i << 32).view(np.float64).astype(np.float32)
    if lo < -FAST_EXP_MAX_INPUT:
        out[xv < -FAST_EXP_MAX_INPUT] = np.float32(0.0)
    if hi > FAST_EXP_MAX_INPUT:
        out[xv > FAST_EXP_MAX_INPUT] = np.float32(np.inf)
    return out[0] if scalar else out


def sigmoid_approx(x):
    """Canonical sigmoid used on the device: 1 / (1 + fast_exp(-x)) in float32."""
    x32 = np.asarray(x, dtype=np.float32)
    one = np.float32(1.0)
    return (one / (one + fast_exp(-x32))).astype(np.float32)


class Activation(Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"


def apply_activation(arr: np.ndarray, elem_type: ElemType, activation: Activation) -> np.ndarray:
    """Activation in float32; integer blocks convert, activate, round to nearest."""
    if activation is Activation.RELU:
        return np.maximum(arr, np.zeros(1, dtype=arr.dtype)[0])
    if elem_type is ElemType.FP32:
        return sigmoid_approx(arr)
    return np.rint(sigmoid_approx(arr.astype(np.float32))).astype(elem_type.np_dtype)


# ---------------------------------------------------------------------------
# Kernel arguments
# ---------------------------------------------------------------------------

class MemSpace(Enum):
    MRAM = "mram"
    WRAM = "wram"


@dataclass(frozen=True)
class BlockDesc:
    """A rows x cols block stored row-major at a byte offset of one memory."""

    space: MemSpace
    offset: int
    rows: int
    cols: int
    elem_type: ElemType

    @property
    def row_bytes(self) -> int:
        return self.cols * self.elem_type.nbytes

    @property
    def nbytes(self) -> int:
        return self.rows * self.row_bytes

    def region(self) -> tuple[int, int]:
        return (self.offset, self.nbytes)


@dataclass
class KernelArgs:
    """Launch arguments: named block descriptors plus small scalars.

    Descriptors double as the kernel's declared access regions; any
    access outside them faults. ``logical_k`` bounds the arithmetic of
    GEMM kernels to the unpadded inner dimension, ``chunk_k`` sets the
    WRAM staging granularity.
    """

    blocks: dict[str, BlockDesc]
    activation: Activation | None = None
    chunk_k: int | None = None
    logical_k: int | None = None

    def mram_regions(self):
        return [b.region() for b in self.blocks.values() if b.space is MemSpace.MRAM]

    def wram_regions(self):
        return [b.region() for b in self.blocks.values() if b.space is MemSpace.WRAM]


def tasklet_ranges(rows: int, n_tasklets: int) -> list[tuple[int, int]]:
    """Disjoint row ranges covering [0, rows), ceil(rows/T) rows per tasklet."""
    per = -(-rows // n_tasklets)
    return [(t * per, min((t + 1) * per, rows))
            for t in range(n_tasklets) if t * per < rows]


def _read_block(view: DpuView, desc: BlockDesc) -> np.ndarray:
    read = view.read_mram if desc.space is MemSpace.MRAM else view.read_wram
    raw = read(desc.offset, desc.nbytes)
    return np.frombuffer(raw, dtype=desc.elem_type.np_dtype).reshape(desc.rows, desc.cols)


def _write_block(view: DpuView, desc: BlockDesc, arr: np.ndarray) -> None:
    write = view.write_mram if desc.space is MemSpace.MRAM else view.write_wram
    write(desc.offset, np.ascontiguousarray(arr, dtype=desc.elem_type.np_dtype).tobytes())


# ---------------------------------------------------------------------------
# GEMM
# ---------------------------------------------------------------------------

def _acc_dtype(elem_type: ElemType):
    return np.float64 if elem_type is ElemType.FP32 else np.int64


def _narrow(acc: np.ndarray, elem_type: ElemType) -> np.ndarray:
    # Integer narrowing is a C-style truncating cast: wrap-around, no saturation.
    return acc.astype(elem_type.np_dtype)


def _chunk_spans(padded_k: int, chunk_k: int) -> list[tuple[int, int]]:
    return [(k0, min(k0 + chunk_k, padded_k)) for k0 in range(0, padded_k, chunk_k)]


def _finish_rows(acc: np.ndarray, args: KernelArgs, c_desc: BlockDesc) -> np.ndarray:
    """Narrow accumulator rows, activate them, and widen to padded C rows."""
    et = c_desc.elem_type
    vals = _narrow(acc, et)
    if args.activation is not None:
        vals = apply_activation(vals, et, args.activation)
    if vals.shape[1] < c_desc.cols:
        rows = np.zeros((vals.shape[0], c_desc.cols), dtype=et.np_dtype)
        rows[:, : vals.shape[1]] = vals
        return rows
    return vals


def k_gemm_mram(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """Blocked GEMM streaming A rows and B^T rows through WRAM in chunks.

    Blocks a (rows x K), b (B^T: cols x K) and c live in MRAM; wa/wb/wc
    are the WRAM staging slots for one A-row chunk, one B^T-row chunk,
    and one C row. Every chunk is moved by DMA before it is used.

    When the whole B^T block fits the wb slot it is staged once and kept
    resident there; otherwise B^T chunks are re-staged for every A row,
    which is the real streaming traffic when B exceeds the scratchpad.
    """
    a, b, c = args.blocks["a"], args.blocks["b"], args.blocks["c"]
    wa, wb, wc = args.blocks["wa"], args.blocks["wb"], args.blocks["wc"]
    et = a.elem_type
    esize = et.nbytes
    np_dt = et.np_dtype
    acc_t = _acc_dtype(et)
    logical_k = args.logical_k if args.logical_k is not None else a.cols
    chunk_k = args.chunk_k if args.chunk_k is not None else a.cols
    spans = _chunk_spans(a.cols, chunk_k)
    a_row_bytes, b_row_bytes, c_row_bytes = a.row_bytes, b.row_bytes, c.row_bytes
    dma, read_wram = view.dma, view.read_wram
    MW, WM = TransferKind.MRAM_TO_WRAM, TransferKind.WRAM_TO_MRAM

    b_full = np.empty((b.rows, b.cols), dtype=acc_t)
    b_resident = b.nbytes <= wb.nbytes
    b_parsed = False
    if b_resident:
        for row in range(b.rows):
            dma(MW, b.offset + row * b_row_bytes, wb.offset + row * b_row_bytes,
                b_row_bytes)
        b_full[:, :] = np.frombuffer(read_wram(wb.offset, b.nbytes),
                                     dtype=np_dt).reshape(b.rows, b.cols)
        b_parsed = True

    def stage_b_chunks(parse: bool) -> None:
        for k0, k1 in spans:
            nbytes = (k1 - k0) * esize
            for row in range(b.rows):
                dma(MW, b.offset + row * b_row_bytes + k0 * esize, wb.offset, nbytes)
                if parse:
                    b_full[row, k0:k1] = np.frombuffer(
                        read_wram(wb.offset, nbytes), dtype=np_dt)

    for lo, hi in tasklet_ranges(a.rows, n_tasklets):
        acc = np.zeros((hi - lo, b.rows), dtype=acc_t)
        for r in range(lo, hi):
            a_row = np.empty(a.cols, dtype=acc_t)
            for k0, k1 in spans:
                nbytes = (k1 - k0) * esize
                dma(MW, a.offset + r * a_row_bytes + k0 * esize, wa.offset, nbytes)
                a_row[k0:k1] = np.frombuffer(read_wram(wa.offset, nbytes), dtype=np_dt)
            if not b_resident:
                stage_b_chunks(parse=not b_parsed)
                b_parsed = True
            a_log = a_row[:logical_k]
            row_acc = acc[r - lo]
            for col in range(b.rows):
                row_acc[col] = np.dot(a_log, b_full[col, :logical_k])
        rows_out = _finish_rows(acc, args, c)
        for r in range(lo, hi):
            view.write_wram(wc.offset, rows_out[r - lo].tobytes())
            dma(WM, c.offset + r * c_row_bytes, wc.offset, c_row_bytes)


def k_gemm_wram(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """Blocked GEMM with whole blocks resident in WRAM.

    A, B^T and C blocks are DMA-ed into WRAM once, all rows are computed
    from the resident copies, and the finished C block is DMA-ed back to
    MRAM so the host can pull it.
    """
    a, b, c = args.blocks["a"], args.blocks["b"], args.blocks["c"]
    wa, wb, wc = args.blocks["wa"], args.blocks["wb"], args.blocks["wc"]
    et = a.elem_type
    acc_t = _acc_dtype(et)
    logical_k = args.logical_k if args.logical_k is not None else a.cols

    view.dma(TransferKind.MRAM_TO_WRAM, a.offset, wa.offset, a.nbytes)
    view.dma(TransferKind.MRAM_TO_WRAM, b.offset, wb.offset, b.nbytes)
    a_res = np.frombuffer(view.read_wram(wa.offset, a.nbytes),
                          dtype=et.np_dtype).reshape(a.rows, a.cols).astype(acc_t)
    b_res = np.frombuffer(view.read_wram(wb.offset, b.nbytes),
                          dtype=et.np_dtype).reshape(b.rows, b.cols).astype(acc_t)

    c_row_bytes = c.row_bytes
    for lo, hi in tasklet_ranges(a.rows, n_tasklets):
        acc = np.zeros((hi - lo, b.rows), dtype=acc_t)
        for r in range(lo, hi):
            a_log = a_res[r, :logical_k]
            row_acc = acc[r - lo]
            for col in range(b.rows):
                row_acc[col] = np.dot(a_log, b_res[col, :logical_k])
        rows_out = _finish_rows(acc, args, c)
        view.write_wram(wc.offset + lo * c_row_bytes, rows_out.tobytes())
    view.dma(TransferKind.WRAM_TO_MRAM, c.offset, wc.offset, c.nbytes)


# ---------------------------------------------------------------------------
# Activation and backpropagation kernels
# ---------------------------------------------------------------------------

def k_relu(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """In-place max(0, x); exact for every element type."""
    x = args.blocks["x"]
    arr = _read_block(view, x)
    _write_block(view, x, np.maximum(arr, np.zeros(1, dtype=arr.dtype)[0]))


def k_sigmoid(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """In-place 1/(1 + fast_exp(-x)); integer blocks round to nearest."""
    x = args.blocks["x"]
    arr = _read_block(view, x)
    _write_block(view, x, apply_activation(arr, x.elem_type, Activation.SIGMOID))


def k_sigmoid_deriv(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """out = a * (1 - a) for a block of activations a."""
    x, out = args.blocks["x"], args.blocks["out"]
    arr = _read_block(view, x)
    one = np.ones(1, dtype=arr.dtype)[0]
    _write_block(view, out, arr * (one - arr))


def k_mat_sub(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """out = x - y, element-wise."""
    x, y, out = args.blocks["x"], args.blocks["y"], args.blocks["out"]
    _write_block(view, out, _read_block(view, x) - _read_block(view, y))


def k_ew_mul(view: DpuView, args: KernelArgs, n_tasklets: int) -> None:
    """out = x * y, element-wise."""
    x, y, out = args.blocks["x"], args.blocks["y"], args.blocks["out"]
    _write_block(view, out, _read_block(view, x) * _read_block(view, y))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

KERNELS: dict[str, KernelRef] = {}


def _register(name: str, fn, iram_bytes: int) -> None:
    KERNELS[name] = KernelRef(name=name, fn=fn, iram_bytes=iram_bytes)


_register("gemm_mram", k_gemm_mram, 6144)
_register("gemm_wram", k_gemm_wram, 5120)
_register("relu", k_relu, 512)
_register("sigmoid", k_sigmoid, 1536)
_register("sigmoid_deriv", k_sigmoid_deriv, 768)
_register("mat_sub", k_mat_sub, 512)
_register("ew_mul", k_ew_mul, 512)


def get_kernel(name: str) -> KernelRef:
    try:
        return KERNELS[name]
    except KeyError:
        raise ValidationError(f"unknown kernel '{name}'") from None
