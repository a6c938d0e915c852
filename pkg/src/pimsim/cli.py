"""Experiment harness: plan inspection, iris training, benchmarks, sweeps.

Exit codes: 0 success, 2 validation error, 3 capacity error, 4 internal
fault (kernel fault or a benchmark checksum mismatch).

All CSV output starts with a schema comment line carrying the schema id
and the PRNG identifier, and is byte-identical across runs with the
same configuration and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .costmodel import CostParams, Workload, estimate_workload, sweep_dpus
from .data import PRNG_ID, load_iris, preset, random_matrix, split_iris
from .errors import CapacityError, KernelFault, PimError, ValidationError
from .kernels import Activation
from .machine import SystemConfig
from .nn import (
    InferenceExec,
    MlpConfig,
    MlpModel,
    TrainConfig,
    evaluate,
    feedforward,
    init_model,
    reference_forward,
    save_model,
    train,
)
from .planner import ElemType, Placement, plan_dims

PLAN_SCHEMA = "pimsim-plan-1"
BENCH_SCHEMA = "pimsim-bench-1"
SWEEP_SCHEMA = "pimsim-sweep-1"

_DTYPES = {"fp32": ElemType.FP32, "int32": ElemType.INT32, "int8": ElemType.INT8}
_PLACEMENTS = {"mram": Placement.MRAM_STREAM, "wram": Placement.WRAM_RESIDENT}


class ChecksumMismatch(PimError):
    """Functional output disagreed with the reference oracle."""


def _dims(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ValidationError(f"expected ROWSxCOLS, got '{text}'") from None


def _parse_ns(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated DPU list, got '{text}'") from None


def _checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _load_params(path: str | None) -> CostParams:
    return CostParams.from_file(path) if path else CostParams.default()


def _apply_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the --config file, then from built-in defaults."""
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key, fallback in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, fallback))
    return args


def _write_out(path: str | None, text: str) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

_PLAN_DEFAULTS = dict(n1=1, n2=1, tasklets=16, placement="mram", dtype="fp32",
                      dpus=None, out=None)


def cmd_plan(args) -> int:
    _apply_config(args, _PLAN_DEFAULTS)
    a_rows, a_cols = _dims(args.a)
    b_rows, b_cols = _dims(args.b)
    if a_cols != b_rows:
        raise ValidationError(f"inner dims differ: {args.a} @ {args.b}")
    config = SystemConfig() if args.dpus is None else SystemConfig(total_dpus=args.dpus)
    placement = _PLACEMENTS[args.placement]
    plan = plan_dims(a_rows, a_cols, b_cols, _DTYPES[args.dtype],
                     args.n1, args.n2, args.tasklets, placement, config)
    usable = (config.mram_capacity if placement is Placement.MRAM_STREAM
              else config.wram_capacity - 8 * 2**10)
    verdict = f"fits {placement.name} ({plan.per_dpu_bytes} of {usable} bytes per DPU)"
    print(f"plan: A {a_rows}x{a_cols} @ B {b_rows}x{b_cols} "
          f"dtype={args.dtype} placement={args.placement}")
    print(f"  N1={plan.n1} N2={plan.n2} N={plan.n} tasklets={plan.tasklets} "
          f"tasklet_rows={plan.tasklet_rows} chunk_k={plan.chunk_k}")
    print(f"  replication_rate_pct={plan.replication_rate_pct:.6f}")
    print(f"  per_dpu_bytes={plan.per_dpu_bytes} "
          f"(A={plan.a_block_bytes} B={plan.b_block_bytes} C={plan.c_block_bytes})")
    print(f"  verdict: {verdict}")
    if args.out:
        doc = {
            "schema": PLAN_SCHEMA,
            "a_rows": a_rows, "a_cols": a_cols, "b_rows": b_rows, "b_cols": b_cols,
            "dtype": args.dtype, "placement": args.placement,
            "n1": plan.n1, "n2": plan.n2, "n": plan.n,
            "tasklets": plan.tasklets, "tasklet_rows": plan.tasklet_rows,
            "chunk_k": plan.chunk_k,
            "replication_rate_pct": plan.replication_rate_pct,
            "a_block_bytes": plan.a_block_bytes,
            "b_block_bytes": plan.b_block_bytes,
            "c_block_bytes": plan.c_block_bytes,
            "per_dpu_bytes": plan.per_dpu_bytes,
        }
        _write_out(args.out, json.dumps(doc, indent=2) + "\n")
    return 0


_TRAIN_DEFAULTS = dict(seed=0, lr=0.1, epochs=500, out="iris-model.bin", iris=None)


def cmd_train_iris(args) -> int:
    _apply_config(args, _TRAIN_DEFAULTS)
    records = load_iris(args.iris)
    dataset = split_iris(records, seed=args.seed)
    config = MlpConfig(layer_sizes=(4, 8, 1),
                       activations=(Activation.SIGMOID,) * 2)
    model = init_model(config, seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                      batch_size=dataset.train_x.shape[0], seed=args.seed)
    trained, losses = train(model, dataset.train_x, dataset.train_y, cfg)
    acc = evaluate(trained, dataset.test_x, dataset.test_y)
    total = dataset.test_x.shape[0]
    correct = round(acc * total)
    print(f"accuracy {correct}/{total} ({100.0 * acc:.1f}%) "
          f"seed={args.seed} lr={args.lr} epochs={args.epochs}")
    if losses:
        print(f"epoch mean |error|: first={losses[0]:.6f} last={losses[-1]:.6f}")
    save_model(trained, args.out)
    print(f"model written to {args.out}")
    return 0


_BENCH_DEFAULTS = dict(n1=4, n2=1, tasklets=16, placement="mram", dtype="fp32",
                       seed=0, batch=None, cost_params=None, out=None)


def cmd_bench(args) -> int:
    _apply_config(args, _BENCH_DEFAULTS)
    net = preset(args.preset)
    batch = args.batch or net.batch_sizes[0]
    et = _DTYPES[args.dtype]
    placement = _PLACEMENTS[args.placement]
    params = _load_params(args.cost_params)

    sizes = net.layer_sizes
    weights = [random_matrix(sizes[i], sizes[i + 1], et, seed=args.seed + i + 1).to_array()
               for i in range(len(sizes) - 1)]
    model = MlpModel(config=MlpConfig(sizes, net.activations, et), weights=weights)
    x = random_matrix(batch, sizes[0], et, seed=args.seed).to_array()

    exec_ctx = InferenceExec.create(args.n1, args.n2, placement, args.tasklets)
    out = feedforward(model, x, exec_ctx)
    got = _checksum(out.to_array().tobytes())
    want = _checksum(np.ascontiguousarray(
        reference_forward(model, x, device_arithmetic=True)).tobytes())
    if got != want:
        raise ChecksumMismatch(
            f"distributed output checksum {got} != reference {want}")

    workload = Workload(name=net.name, batch=batch,
                        layer_dims=tuple((batch, sizes[i], sizes[i + 1])
                                         for i in range(len(sizes) - 1)))
    report = estimate_workload(workload, args.n1 * args.n2, params, et, placement,
                               args.tasklets, exec_ctx.system.config,
                               preferred=(args.n1, args.n2))
    lines = [
        f"# {BENCH_SCHEMA} prng={PRNG_ID} pimsim={__version__}",
        "preset,N,dtype,placement,est_alloc_s,est_push_s,est_stage_s,"
        "est_kernel_s,est_pull_s,est_total_s,checksum",
        f"{net.name},{args.n1 * args.n2},{args.dtype},{args.placement},"
        f"{report.alloc_s:.9e},{report.push_s:.9e},{report.stage_s:.9e},"
        f"{report.kernel_s:.9e},{report.pull_s:.9e},{report.total_s:.9e},{got}",
    ]
    _write_out(args.out, "\n".join(lines) + "\n")
    return 0


_SWEEP_DEFAULTS = dict(dpus="256,512,1024,2048", tasklets=16, placement="mram",
                       dtype="fp32", batch=None, cost_params=None, out=None)


def cmd_sweep(args) -> int:
    _apply_config(args, _SWEEP_DEFAULTS)
    net = preset(args.preset)
    workload = Workload.from_preset(net, batch=args.batch)
    params = _load_params(args.cost_params)
    result = sweep_dpus(workload, _parse_ns(args.dpus), params,
                        _DTYPES[args.dtype], _PLACEMENTS[args.placement],
                        args.tasklets)
    lines = [
        f"# {SWEEP_SCHEMA} prng={PRNG_ID} pimsim={__version__}",
        "preset,N,dtype,placement,feasible,est_alloc_s,est_push_s,est_stage_s,"
        "est_kernel_s,est_pull_s,est_total_s",
    ]
    for point in result.points:
        if point.report is None:
            lines.append(f"{net.name},{point.n},{args.dtype},{args.placement},"
                         "no,,,,,,")
            continue
        r = point.report
        lines.append(
            f"{net.name},{point.n},{args.dtype},{args.placement},yes,"
            f"{r.alloc_s:.9e},{r.push_s:.9e},{r.stage_s:.9e},"
            f"{r.kernel_s:.9e},{r.pull_s:.9e},{r.total_s:.9e}")
    lines.append(f"# argmin_n={result.argmin_n}")
    _write_out(args.out, "\n".join(lines) + "\n")
    if args.out:
        print(f"argmin_n={result.argmin_n}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "n1" in names:
        p.add_argument("--n1", type=int, help="row blocks of A")
    if "n2" in names:
        p.add_argument("--n2", type=int, help="column blocks of B")
    if "tasklets" in names:
        p.add_argument("--tasklets", type=int, help="tasklets per DPU (default 16)")
    if "placement" in names:
        p.add_argument("--placement", choices=sorted(_PLACEMENTS),
                       help="block placement strategy (default mram)")
    if "dtype" in names:
        p.add_argument("--dtype", choices=sorted(_DTYPES),
                       help="element type (default fp32)")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="PRNG seed (default 0)")
    if "cost_params" in names:
        p.add_argument("--cost-params", dest="cost_params",
                       help="path to a cost parameter file")
    if "out" in names:
        p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--config", help="JSON config file; flags override its keys")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimsim", description="PIM simulator experiment harness")
    parser.add_argument("--version", action="version", version=f"pimsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute and print a partition plan")
    p.add_argument("--a", required=True, help="A dims as ROWSxCOLS")
    p.add_argument("--b", required=True, help="B dims as ROWSxCOLS")
    p.add_argument("--dpus", type=int, help="total DPUs available (default 2560)")
    _add_common(p, "n1", "n2", "tasklets", "placement", "dtype", "out")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("train-iris", help="train the 4-8-1 iris classifier")
    p.add_argument("--lr", type=float, help="learning rate (default 0.1)")
    p.add_argument("--epochs", type=int, help="training epochs (default 500)")
    p.add_argument("--iris", help="iris CSV path (default: bundled copy)")
    _add_common(p, "seed", "out")
    p.set_defaults(fn=cmd_train_iris)

    p = sub.add_parser("bench", help="run one preset functionally and estimate cost")
    p.add_argument("--preset", required=True, help="Net1 | Net2 | Net3 | Net4")
    p.add_argument("--batch", type=int, help="batch size (default: preset's first)")
    _add_common(p, "n1", "n2", "tasklets", "placement", "dtype", "seed",
                "cost_params", "out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="cost-model sweep over DPU counts")
    p.add_argument("--preset", required=True, help="Net1 | Net2 | Net3 | Net4")
    p.add_argument("--dpus", help="comma-separated DPU counts "
                                  "(default 256,512,1024,2048)")
    p.add_argument("--batch", type=int, help="batch size (default: preset's first)")
    _add_common(p, "tasklets", "placement", "dtype", "cost_params", "out")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (KernelFault, ChecksumMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
