#!/usr/bin/env python3
"""Tasklet saturation curve: modeled GEMM throughput for 1..24 tasklets.

The pipeline overlaps at most 11 threads, so throughput climbs up to 11
tasklets and is exactly flat beyond. Functional output is also checked
to be identical at every tasklet count.
"""

import argparse
import csv
import sys

import numpy as np

from pimsim import ElemType, Placement, allocate_dpus, distributed_matmul, make_plan
from pimsim.costmodel import CostParams, estimate_kernel_s
from pimsim.data import random_matrix
from pimsim.planner import plan_dims


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=512)
    parser.add_argument("--k", type=int, default=128)
    parser.add_argument("--cols", type=int, default=64)
    parser.add_argument("--out", default="tasklet_saturation.csv")
    args = parser.parse_args()

    params = CostParams.default()
    a = random_matrix(args.rows, args.k, seed=1)
    b = random_matrix(args.k, args.cols, seed=2)

    baseline = None
    rows = []
    for t in range(1, 25):
        plan = plan_dims(args.rows, args.k, args.cols, ElemType.FP32,
                         1, 1, t, Placement.MRAM_STREAM)
        kernel_s = estimate_kernel_s(plan, params)
        system = allocate_dpus(1, tasklets=t)
        out = distributed_matmul(system, a, b, make_plan(a, b, 1, 1, t,
                                                         Placement.MRAM_STREAM)).to_array()
        if baseline is None:
            baseline = out
        elif not np.array_equal(out, baseline):
            print(f"tasklets={t}: output differs from t=1!", file=sys.stderr)
            raise SystemExit(4)
        rows.append((t, kernel_s))

    with open(args.out, "w", newline="") as fh:
        fh.write("# pimsim-tasklets-1\n")
        writer = csv.writer(fh)
        writer.writerow(["tasklets", "est_kernel_s"])
        writer.writerows(rows)
    print(f"wrote {args.out}; outputs identical for t in [1, 24]")


if __name__ == "__main__":
    main()
