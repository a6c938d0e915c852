"""Multilayer perceptron on the simulated device set.

Inference distributes each layer's GEMM over the DPUs: activations are
split into N1 row blocks, the weight matrix is transposed and split into
N2 column blocks, blocks are pushed to MRAM, the fused GEMM+activation
kernel runs, and the host gathers and crops the partial results before
feeding the next layer (DPUs share data only through the host).

Training runs the backpropagation kernels on a single DPU with
multi-tasklets: the error is the plain difference between targets and
outputs, deltas combine the sigmoid-derivative and element-wise-multiply
kernels, and the host applies the learning-rate-scaled weight updates
between steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, ParseError, ValidationError
from .kernels import (
    Activation,
    BlockDesc,
    KernelArgs,
    MemSpace,
    apply_activation,
    get_kernel,
)
from .machine import DpuSet, LaunchMode, PimSystem, SystemConfig, allocate_dpus
from .planner import (
    ElemType,
    MatrixBuf,
    PartitionPlan,
    Placement,
    WRAM_RESERVE_BYTES,
    first_feasible_split,
    make_plan,
)

MODEL_MAGIC = b"PMLP"
_DTYPE_CODES = {ElemType.FP32: 0, ElemType.INT32: 1, ElemType.INT8: 2}
_DTYPE_BY_CODE = {v: k for k, v in _DTYPE_CODES.items()}
_ACT_CODES = {Activation.SIGMOID: 0, Activation.RELU: 1}
_ACT_BY_CODE = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class MlpConfig:
    """Network shape: layer sizes, one activation per non-input layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[Activation, ...]
    elem_type: ElemType = ElemType.FP32

    def __post_init__(self):
        if len(self.layer_sizes) < 3:
            raise ValidationError("an MLP needs at least three layers")
        if any(s < 1 for s in self.layer_sizes):
            raise ValidationError("layer sizes must be >= 1")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValidationError(
                f"need {len(self.layer_sizes) - 1} activations, got {len(self.activations)}")


@dataclass
class MlpModel:
    """Weight matrices chained (prev_size x next_size); no bias terms."""

    config: MlpConfig
    weights: list[np.ndarray]

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1:
            raise ValidationError("weight count does not match layer count")
        for i, w in enumerate(self.weights):
            if w.shape != (sizes[i], sizes[i + 1]):
                raise DimMismatchError(
                    f"weight {i} has shape {w.shape}, expected {(sizes[i], sizes[i + 1])}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    batch_size: int | None = None    # None: full-batch updates
    seed: int = 0


@dataclass
class InferenceExec:
    """A distributed execution context: allocated system plus the layer-1 split."""

    system: PimSystem
    n1: int
    n2: int
    placement: Placement = Placement.MRAM_STREAM
    tasklets: int = 16

    @classmethod
    def create(cls, n1: int, n2: int, placement: Placement = Placement.MRAM_STREAM,
               tasklets: int = 16, config: SystemConfig | None = None) -> "InferenceExec":
        system = allocate_dpus(n1 * n2, config, tasklets=tasklets)
        return cls(system=system, n1=n1, n2=n2, placement=placement, tasklets=tasklets)


def init_model(config: MlpConfig, seed: int = 0) -> MlpModel:
    """Seeded weight init: uniform in [-0.5, 0.5) (integers in [-8, 8))."""
    rng = np.random.default_rng(seed)
    weights = []
    sizes = config.layer_sizes
    for i in range(len(sizes) - 1):
        shape = (sizes[i], sizes[i + 1])
        if config.elem_type is ElemType.FP32:
            weights.append(rng.uniform(-0.5, 0.5, size=shape).astype(np.float32))
        else:
            weights.append(rng.integers(-8, 8, size=shape,
                                        dtype=config.elem_type.np_dtype))
    return MlpModel(config=config, weights=weights)


# ---------------------------------------------------------------------------
# Distributed GEMM execution
# ---------------------------------------------------------------------------

def _gemm_kernel_args(plan: PartitionPlan, activation: Activation | None,
                      config: SystemConfig) -> KernelArgs:
    et = plan.elem_type
    blocks = {
        "a": BlockDesc(MemSpace.MRAM, plan.a_offset, plan.a_block_rows, plan.padded_k, et),
        "b": BlockDesc(MemSpace.MRAM, plan.b_offset, plan.b_block_cols, plan.padded_k, et),
        "c": BlockDesc(MemSpace.MRAM, plan.c_offset, plan.a_block_rows, plan.c_pad_cols, et),
    }
    esize = et.nbytes
    if plan.placement is Placement.MRAM_STREAM:
        # WRAM layout [A chunk | B slot | C row]; the B slot grows to hold the
        # whole B^T block when the budget allows, so the kernel can keep it
        # resident instead of re-staging it for every A row.
        usable = config.wram_capacity - WRAM_RESERVE_BYTES
        chunk_bytes = plan.chunk_k * esize
        c_row_bytes = plan.c_pad_cols * esize
        if chunk_bytes + plan.b_block_bytes + c_row_bytes <= usable:
            b_slot_elems = plan.b_block_cols * plan.padded_k
        else:
            b_slot_elems = plan.chunk_k
        blocks["wa"] = BlockDesc(MemSpace.WRAM, 0, 1, plan.chunk_k, et)
        blocks["wb"] = BlockDesc(MemSpace.WRAM, chunk_bytes, 1, b_slot_elems, et)
        blocks["wc"] = BlockDesc(MemSpace.WRAM, chunk_bytes + b_slot_elems * esize,
                                 1, plan.c_pad_cols, et)
    else:
        blocks["wa"] = BlockDesc(MemSpace.WRAM, 0,
                                 plan.a_block_rows, plan.padded_k, et)
        blocks["wb"] = BlockDesc(MemSpace.WRAM, plan.a_block_bytes,
                                 plan.b_block_cols, plan.padded_k, et)
        blocks["wc"] = BlockDesc(MemSpace.WRAM, plan.a_block_bytes + plan.b_block_bytes,
                                 plan.a_block_rows, plan.c_pad_cols, et)
    return KernelArgs(blocks=blocks, activation=activation,
                      chunk_k=plan.chunk_k, logical_k=plan.k)


def distributed_matmul(system: PimSystem, a: MatrixBuf, b: MatrixBuf,
                       plan: PartitionPlan, activation: Activation | None = None,
                       dpu_set: DpuSet | None = None) -> MatrixBuf:
    """Run one planned GEMM (optionally fused with an activation) on the set.

    B is transposed host-side so each column block transfers as
    contiguous rows of B^T; both operands are zero-padded to the plan's
    equalized block sizes. Returns the gathered product cropped to its
    logical dimensions.
    """
    if a.logical_cols != b.logical_rows:
        raise DimMismatchError("inner dimensions differ")
    et = plan.elem_type
    dtype = et.np_dtype
    if dpu_set is None:
        dpu_set = system.subset(plan.n)
    if len(dpu_set) < plan.n:
        raise ValidationError(f"plan needs {plan.n} DPUs, set has {len(dpu_set)}")

    a_grid = np.zeros((plan.n1 * plan.a_block_rows, plan.padded_k), dtype=dtype)
    a_grid[: a.logical_rows, : plan.k] = a.to_array()
    bt_grid = np.zeros((plan.n2 * plan.b_block_cols, plan.padded_k), dtype=dtype)
    bt_grid[: b.logical_cols, : plan.k] = b.to_array().T

    abr, bbc = plan.a_block_rows, plan.b_block_cols
    a_blocks, b_blocks = [], []
    for d in range(plan.n):
        i, j = plan.assignment[d]
        dpu_id = dpu_set.dpu_ids[d]
        a_blocks.append((dpu_id, plan.a_offset, a_grid[i * abr:(i + 1) * abr].tobytes()))
        b_blocks.append((dpu_id, plan.b_offset, bt_grid[j * bbc:(j + 1) * bbc].tobytes()))
    system.push_to_mram(dpu_set, a_blocks)
    system.push_to_mram(dpu_set, b_blocks)

    kernel_name = "gemm_mram" if plan.placement is Placement.MRAM_STREAM else "gemm_wram"
    args = _gemm_kernel_args(plan, activation, system.config)
    active = DpuSet(dpu_set.dpu_ids[: plan.n], dpu_set.launch_mode)
    system.launch(active, get_kernel(kernel_name), args, LaunchMode.SYNC)

    pulls = [(dpu_set.dpu_ids[d], plan.c_offset, plan.c_block_bytes) for d in range(plan.n)]
    raw_blocks = system.pull_from_mram(dpu_set, pulls)

    out = np.zeros((a.logical_rows, b.logical_cols), dtype=dtype)
    for d, raw in enumerate(raw_blocks):
        i, j = plan.assignment[d]
        block = np.frombuffer(raw, dtype=dtype).reshape(abr, plan.c_pad_cols)
        (a_lo, a_hi), (b_lo, b_hi) = plan.a_block_ranges[i], plan.b_block_ranges[j]
        out[a_lo:a_hi, b_lo:b_hi] = block[: a_hi - a_lo, : b_hi - b_lo]
    return MatrixBuf.from_array(out, et)


def feedforward(model: MlpModel, x: MatrixBuf | np.ndarray,
                exec_ctx: InferenceExec) -> MatrixBuf:
    """Distributed inference with host-mediated synchronization per layer.

    The layer-1 split is (exec.n1, exec.n2); deeper layers keep the same
    DPU count when they can but fall back to the first feasible split,
    possibly over fewer DPUs, when the preferred one no longer fits
    (e.g. a 1-column output layer cannot split B at all).
    """
    et = model.config.elem_type
    if isinstance(x, MatrixBuf):
        act = x
    else:
        act = MatrixBuf.from_array(np.asarray(x, dtype=et.np_dtype), et)
    if act.logical_cols != model.config.layer_sizes[0]:
        raise DimMismatchError(
            f"input has {act.logical_cols} features, model expects "
            f"{model.config.layer_sizes[0]}")
    n = exec_ctx.n1 * exec_ctx.n2
    cfg = exec_ctx.system.config
    for layer, w in enumerate(model.weights):
        w_buf = MatrixBuf.from_array(w, et)
        plan = first_feasible_split(
            n, act.logical_rows, w.shape[0], w.shape[1], et,
            exec_ctx.tasklets, exec_ctx.placement, cfg,
            preferred=(exec_ctx.n1, exec_ctx.n2), allow_fewer=True)
        act = distributed_matmul(exec_ctx.system, act, w_buf, plan,
                                 activation=model.config.activations[layer])
    return act


# ---------------------------------------------------------------------------
# Host reference oracle
# ---------------------------------------------------------------------------

def reference_matmul(a: np.ndarray, b: np.ndarray, elem_type: ElemType) -> np.ndarray:
    """Element-wise double-precision dot products, narrowed like the kernels.

    This is the canonical arithmetic the device kernels implement;
    integer paths accumulate in 64-bit and wrap on narrowing.
    """
    acc_t = np.float64 if elem_type is ElemType.FP32 else np.int64
    a64 = np.ascontiguousarray(a, dtype=acc_t)
    bt64 = np.ascontiguousarray(np.asarray(b, dtype=acc_t).T)
    out = np.empty((a64.shape[0], bt64.shape[0]), dtype=acc_t)
    for r in range(a64.shape[0]):
        row = a64[r]
        for c in range(bt64.shape[0]):
            out[r, c] = np.dot(row, bt64[c])
    return out.astype(elem_type.np_dtype)


def reference_forward(model: MlpModel, x: np.ndarray,
                      device_arithmetic: bool = False) -> np.ndarray:
    """Host forward pass, the sequential CPU baseline.

    Default: double precision GEMM with exact activations. With
    ``device_arithmetic`` it instead reproduces the device element rule
    (float32 narrowing, fast-exp sigmoid) bit-for-bit, which is what the
    benchmark checksum verification relies on.
    """
    et = model.config.elem_type
    act = np.asarray(x, dtype=et.np_dtype if device_arithmetic else np.float64)
    for layer, w in enumerate(model.weights):
        activation = model.config.activations[layer]
        if device_arithmetic:
            z = reference_matmul(act, w, et)
            act = apply_activation(z, et, activation)
        else:
            z = act @ np.asarray(w, dtype=np.float64)
            if activation is Activation.RELU:
                act = np.maximum(z, 0.0)
            else:
                act = 1.0 / (1.0 + np.exp(-z))
    return act


# ---------------------------------------------------------------------------
# Training on a single DPU
# ---------------------------------------------------------------------------

class _SingleDpu:
    """Helper running kernels on one DPU for the training loop."""

    def __init__(self, config: SystemConfig | None = None, tasklets: int = 16):
        self.system = allocate_dpus(1, config, tasklets=tasklets)
        self.tasklets = tasklets
        self.dpu_set = self.system.full_set()

    def matmul(self, a: np.ndarray, b: np.ndarray, et: ElemType,
               activation: Activation | None = None) -> np.ndarray:
        a_buf = MatrixBuf.from_array(a, et)
        b_buf = MatrixBuf.from_array(b, et)
        plan = make_plan(a_buf, b_buf, 1, 1, self.tasklets,
                         Placement.MRAM_STREAM, self.system.config)
        return distributed_matmul(self.system, a_buf, b_buf, plan,
                                  activation=activation, dpu_set=self.dpu_set).to_array()

    def elementwise(self, kernel_name: str, x: np.ndarray,
                    y: np.ndarray | None = None, et: ElemType = ElemType.FP32) -> np.ndarray:
        """Run one element-wise kernel with operands pushed to MRAM."""
        rows, cols = x.shape
        nbytes = rows * cols * et.nbytes
        padded = -(-nbytes // 8) * 8
        pad_tail = bytes(padded - nbytes)
        blocks = {"x": BlockDesc(MemSpace.MRAM, 0, rows, cols, et)}
        pushes = [(0, 0, np.ascontiguousarray(x, dtype=et.np_dtype).tobytes() + pad_tail)]
        offset = padded
        if y is not None:
            blocks["y"] = BlockDesc(MemSpace.MRAM, offset, rows, cols, et)
            pushes.append((0, offset,
                           np.ascontiguousarray(y, dtype=et.np_dtype).tobytes() + pad_tail))
            offset += padded
        blocks["out"] = BlockDesc(MemSpace.MRAM, offset, rows, cols, et)
        for dpu_id, off, data in pushes:
            self.system.push_to_mram(self.dpu_set, [(dpu_id, off, data)])
        self.system.launch(self.dpu_set, get_kernel(kernel_name),
                           KernelArgs(blocks=blocks), LaunchMode.SYNC)
        raw = self.system.pull_from_mram(self.dpu_set, [(0, offset, padded)])[0]
        return np.frombuffer(raw[:nbytes], dtype=et.np_dtype).reshape(rows, cols).copy()


def train(model: MlpModel, x: np.ndarray, y: np.ndarray,
          cfg: TrainConfig, system_config: SystemConfig | None = None
          ) -> tuple[MlpModel, list[float]]:
    """Gradient-descent training on a single DPU; returns the model and
    the per-epoch mean absolute error trace.

    Per batch: forward through the fused GEMM+sigmoid kernel, error
    E = Y - Yhat via the subtraction kernel, output delta
    E * sigmoid'(a) via the derivative and element-wise kernels, hidden
    deltas propagated through transposed weights, and host-side updates
    W <- W + lr * a^T delta.
    """
    et = model.config.elem_type
    if et is not ElemType.FP32:
        raise ValidationError("training supports FP32 models only")
    if any(a is not Activation.SIGMOID for a in model.config.activations):
        raise ValidationError("training supports all-sigmoid networks only")
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise DimMismatchError("feature and label row counts differ")

    dev = _SingleDpu(system_config, tasklets=16)
    weights = [w.copy() for w in model.weights]
    lr = np.float32(cfg.learning_rate)
    batch = cfg.batch_size or x.shape[0]
    losses: list[float] = []

    for _ in range(cfg.epochs):
        abs_err_sum = 0.0
        n_outputs = 0
        for lo in range(0, x.shape[0], batch):
            xb, yb = x[lo:lo + batch], y[lo:lo + batch]
            acts = [xb]
            for li, w in enumerate(weights):
                acts.append(dev.matmul(acts[-1], w, et,
                                       activation=model.config.activations[li]))
            err = dev.elementwise("mat_sub", yb, acts[-1], et)
            abs_err_sum += float(np.abs(err).sum())
            n_outputs += err.size
            sd = dev.elementwise("sigmoid_deriv", acts[-1], None, et)
            delta = dev.elementwise("ew_mul", err, sd, et)
            deltas = [delta]
            for li in range(len(weights) - 1, 0, -1):
                back = dev.matmul(deltas[0], weights[li].T.copy(), et)
                sd = dev.elementwise("sigmoid_deriv", acts[li], None, et)
                deltas.insert(0, dev.elementwise("ew_mul", back, sd, et))
            for li in range(len(weights)):
                grad = dev.matmul(acts[li].T.copy(), deltas[li], et)
                weights[li] = weights[li] + lr * grad
        losses.append(abs_err_sum / n_outputs)
    return MlpModel(config=model.config, weights=weights), losses


def evaluate(model: MlpModel, x: np.ndarray, labels: np.ndarray,
             threshold: float = 0.5) -> float:
    """Binary accuracy: fraction of samples where (output >= threshold) == label.

    Outputs exactly at the threshold map to class 1. Uses the device
    arithmetic so accuracy matches what the DPUs would produce.
    """
    out = reference_forward(model, x, device_arithmetic=True)
    pred = (out.reshape(-1) >= threshold).astype(np.float32)
    labels = np.asarray(labels, dtype=np.float32).reshape(-1)
    return float((pred == labels).mean())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(model: MlpModel, path: str) -> None:
    """Write the documented flat binary format (see README for the layout)."""
    sizes = model.config.layer_sizes
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", _DTYPE_CODES[model.config.elem_type], len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack(f"<{len(model.config.activations)}I",
                             *[_ACT_CODES[a] for a in model.config.activations]))
        for w in model.weights:
            fh.write(np.ascontiguousarray(w).tobytes())


def load_model(path: str) -> MlpModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ParseError("bad magic, not a model file")
    pos = 4
    dtype_code, n_layers = struct.unpack_from("<II", data, pos)
    pos += 8
    if dtype_code not in _DTYPE_BY_CODE:
        raise ParseError(f"unknown dtype code {dtype_code}")
    sizes = struct.unpack_from(f"<{n_layers}I", data, pos)
    pos += 4 * n_layers
    act_codes = struct.unpack_from(f"<{n_layers - 1}I", data, pos)
    pos += 4 * (n_layers - 1)
    et = _DTYPE_BY_CODE[dtype_code]
    config = MlpConfig(layer_sizes=tuple(sizes),
                       activations=tuple(_ACT_BY_CODE[c] for c in act_codes),
                       elem_type=et)
    weights = []
    for i in range(n_layers - 1):
        count = sizes[i] * sizes[i + 1]
        nbytes = count * et.nbytes
        w = np.frombuffer(data[pos:pos + nbytes], dtype=et.np_dtype)
        if w.size != count:
            raise ParseError(f"truncated weight matrix {i}")
        weights.append(w.reshape(sizes[i], sizes[i + 1]).copy())
        pos += nbytes
    return MlpModel(config=config, weights=weights)
