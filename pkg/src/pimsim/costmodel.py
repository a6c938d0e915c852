"""Analytical timing model for the device set.

Decomposes a run into allocation, host<->MRAM transfer, MRAM->WRAM
staging, and kernel execution. Kernel time follows the pipeline model:
each instruction occupies 11 issue cycles, and threads hide each
other's latency up to 11 tasklets, beyond which throughput is flat.
Multiply-accumulate instruction counts per element type reflect that
only 8-bit multiplication is native and wider types are emulated.

Constants live in a versioned parameter file and are calibrated, not
measured: defaults are chosen to reproduce the published DPU-count
sweet spots, while the monotonicity properties (kernel time
non-increasing in the DPU count, allocation time strictly increasing)
hold for any positive calibration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import NamedTuple

from .data import NetPreset
from .errors import BlockTooLargeError, CapacityError, ValidationError
from .machine import SystemConfig
from .planner import ElemType, PartitionPlan, Placement, first_feasible_split

# Throughput saturates here: the pipeline overlaps at most this many threads.
PIPELINE_PARALLEL_TASKLETS = 11

COST_PARAMS_VERSION = "pimsim-cost-1"


@dataclass(frozen=True)
class CostParams:
    """Calibratable model constants; see `cost_params.json` for the shipped set."""

    version: str = COST_PARAMS_VERSION
    dpu_clock_hz: float = 350e6
    issue_cycles_per_instr: float = 11.0
    instr_per_mac_int8: float = 4.0       # native 8-bit multiply
    instr_per_mac_int32: float = 28.0     # emulated 32-bit multiply
    instr_per_mac_fp32: float = 36.0      # emulated float multiply-add
    host_mram_bw: float = 6.0e9           # bytes/s, aggregate host<->MRAM
    mram_wram_bw: float = 6.24e8          # bytes/s per DPU, MRAM<->WRAM DMA
    per_dpu_alloc_s: float = 2.5e-4
    per_launch_s: float = 2.0e-4

    def __post_init__(self):
        numeric = {k: v for k, v in asdict(self).items() if k != "version"}
        for name, value in numeric.items():
            if value <= 0:
                raise ValidationError(f"cost parameter {name} must be positive")
        if not (self.instr_per_mac_int8 <= self.instr_per_mac_int32
                <= self.instr_per_mac_fp32):
            raise ValidationError(
                "instruction counts must be ordered INT8 <= INT32 <= FP32")

    def instr_per_mac(self, elem_type: ElemType) -> float:
        return {
            ElemType.INT8: self.instr_per_mac_int8,
            ElemType.INT32: self.instr_per_mac_int32,
            ElemType.FP32: self.instr_per_mac_fp32,
        }[elem_type]

    @classmethod
    def from_file(cls, path: str) -> "CostParams":
        with open(path) as fh:
            raw = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown cost parameter keys: {sorted(unknown)}")
        return cls(**raw)

    def to_file(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def default(cls) -> "CostParams":
        path = resources.files("pimsim").joinpath("cost_params.json")
        return cls.from_file(str(path))


class TransferCost(NamedTuple):
    push_s: float
    stage_s: float
    pull_s: float

    @property
    def total_s(self) -> float:
        return self.push_s + self.stage_s + self.pull_s


@dataclass(frozen=True)
class LayerCost:
    name: str
    push_s: float
    stage_s: float
    kernel_s: float
    pull_s: float


@dataclass(frozen=True)
class CostReport:
    """Per-phase seconds; total_s is exactly the sum of the five phases."""

    alloc_s: float
    push_s: float
    stage_s: float
    kernel_s: float
    pull_s: float
    layers: tuple[LayerCost, ...] = field(default_factory=tuple)

    @property
    def total_s(self) -> float:
        return self.alloc_s + self.push_s + self.stage_s + self.kernel_s + self.pull_s


def effective_parallel_tasklets(t: int) -> int:
    """Tasklets that contribute throughput; the pipeline saturates at 11."""
    if t < 1:
        raise ValidationError("tasklet count must be >= 1")
    return min(t, PIPELINE_PARALLEL_TASKLETS)


def gemm_macs_per_dpu(plan: PartitionPlan) -> int:
    """MACs one DPU executes, padded dimensions included (padding is real work)."""
    return plan.a_block_rows * plan.padded_k * plan.c_pad_cols


def estimate_kernel_s(plan: PartitionPlan, params: CostParams,
                      dtype: ElemType | None = None,
                      macs: int | None = None) -> float:
    """Kernel seconds for one launch of the planned GEMM.

    MACs per DPU x instructions per MAC x issue cycles / clock, divided
    by the effective parallel tasklets, plus the fixed launch overhead.
    A zero-MAC kernel costs the launch overhead only.
    """
    dtype = dtype or plan.elem_type
    if macs is None:
        macs = gemm_macs_per_dpu(plan)
    eff = effective_parallel_tasklets(plan.tasklets)
    cycles = macs * params.instr_per_mac(dtype) * params.issue_cycles_per_instr
    return cycles / params.dpu_clock_hz / eff + params.per_launch_s


def estimate_transfer_s(plan: PartitionPlan, params: CostParams) -> TransferCost:
    """Host transfer and staging seconds for one planned GEMM.

    Push covers every replicated block (A lands on N2 DPUs, B on N1);
    pull covers the gathered C blocks. Only the WRAM-resident placement
    pays the extra MRAM->WRAM stage: the host cannot write WRAM, so
    resident data always crosses MRAM first.
    """
    n = plan.n
    push_bytes = n * (plan.a_block_bytes + plan.b_block_bytes)
    pull_bytes = n * plan.c_block_bytes
    push_s = push_bytes / params.host_mram_bw
    pull_s = pull_bytes / params.host_mram_bw
    if plan.placement is Placement.WRAM_RESIDENT:
        stage_s = plan.per_dpu_bytes / params.mram_wram_bw
    else:
        stage_s = 0.0
    return TransferCost(push_s=push_s, stage_s=stage_s, pull_s=pull_s)


@dataclass(frozen=True)
class Workload:
    """A chain of GEMM layers at a fixed batch size."""

    name: str
    batch: int
    layer_dims: tuple[tuple[int, int, int], ...]   # (rows, k, cols) per layer

    @classmethod
    def from_preset(cls, preset: NetPreset, batch: int | None = None) -> "Workload":
        # arbitrary batches allowed; preset sizes are just the published ones
        batch = batch or preset.batch_sizes[0]
        sizes = preset.layer_sizes
        dims = tuple((batch, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1))
        return cls(name=preset.name, batch=batch, layer_dims=dims)


def plan_workload(workload: Workload, n: int, dtype: ElemType,
                  placement: Placement, tasklets: int,
                  config: SystemConfig | None = None,
                  preferred: tuple[int, int] | None = None) -> list[PartitionPlan]:
    """One feasible plan per layer at a fixed DPU count."""
    config = config or SystemConfig()
    plans = []
    for rows, k, cols in workload.layer_dims:
        plans.append(first_feasible_split(n, rows, k, cols, dtype, tasklets,
                                          placement, config, preferred=preferred))
    return plans


def estimate_workload(workload: Workload, n: int, params: CostParams,
                      dtype: ElemType = ElemType.FP32,
                      placement: Placement = Placement.MRAM_STREAM,
                      tasklets: int = 16,
                      config: SystemConfig | None = None,
                      preferred: tuple[int, int] | None = None) -> CostReport:
    """Full inference estimate: allocation once, then per-layer phases."""
    plans = plan_workload(workload, n, dtype, placement, tasklets, config, preferred)
    layers = []
    for idx, plan in enumerate(plans):
        transfer = estimate_transfer_s(plan, params)
        layers.append(LayerCost(
            name=f"layer{idx + 1}",
            push_s=transfer.push_s, stage_s=transfer.stage_s,
            kernel_s=estimate_kernel_s(plan, params, dtype),
            pull_s=transfer.pull_s))
    return CostReport(
        alloc_s=params.per_dpu_alloc_s * n,
        push_s=sum(l.push_s for l in layers),
        stage_s=sum(l.stage_s for l in layers),
        kernel_s=sum(l.kernel_s for l in layers),
        pull_s=sum(l.pull_s for l in layers),
        layers=tuple(layers))


@dataclass(frozen=True)
class SweepPoint:
    n: int
    report: CostReport | None
    note: str = ""

    @property
    def feasible(self) -> bool:
        return self.report is not None


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    argmin_n: int

    def report_for(self, n: int) -> CostReport | None:
        for p in self.points:
            if p.n == n:
                return p.report
        return None


def sweep_dpus(workload: Workload, candidate_ns: list[int], params: CostParams,
               dtype: ElemType = ElemType.FP32,
               placement: Placement = Placement.MRAM_STREAM,
               tasklets: int = 16,
               config: SystemConfig | None = None) -> SweepResult:
    """Estimate the workload at each DPU count and return the cheapest.

    Infeasible counts (no block split fits) are kept in the curve with a
    note but excluded from the argmin. Ties resolve to the smallest N.
    """
    if not candidate_ns:
        raise ValidationError("candidate DPU counts must be non-empty")
    points = []
    for n in candidate_ns:
        try:
            report = estimate_workload(workload, n, params, dtype, placement,
                                       tasklets, config)
            points.append(SweepPoint(n=n, report=report))
        except (BlockTooLargeError, CapacityError) as exc:
            points.append(SweepPoint(n=n, report=None, note=str(exc)))
    feasible = [p for p in points if p.feasible]
    if not feasible:
        raise BlockTooLargeError("MRAM", 0, 0,
                                 f"no candidate DPU count fits workload {workload.name}")
    argmin = min(feasible, key=lambda p: (p.report.total_s, p.n)).n
    return SweepResult(points=tuple(points), argmin_n=argmin)
