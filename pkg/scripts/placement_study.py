#!/usr/bin/env python3
"""MRAM-streaming vs WRAM-resident placement for the small networks.

For single-use data the resident placement pays an extra MRAM->WRAM
staging step on top of the same host transfers, so its modeled total is
never lower; the CSV makes that visible across batch sizes.
"""

import argparse
import csv

from pimsim.costmodel import CostParams, Workload, estimate_workload
from pimsim.data import preset
from pimsim.planner import ElemType, Placement

_DTYPES = {"fp32": ElemType.FP32, "int32": ElemType.INT32, "int8": ElemType.INT8}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="Net3", choices=["Net3", "Net4"])
    parser.add_argument("--dpus", type=int, default=256)
    parser.add_argument("--dtype", default="int8", choices=sorted(_DTYPES))
    parser.add_argument("--out", default="placement_study.csv")
    args = parser.parse_args()

    net = preset(args.preset)
    params = CostParams.default()
    dtype = _DTYPES[args.dtype]

    with open(args.out, "w", newline="") as fh:
        fh.write("# pimsim-placement-1\n")
        writer = csv.writer(fh)
        writer.writerow(["preset", "batch", "dtype", "placement",
                         "est_stage_s", "est_total_s"])
        for batch in net.batch_sizes:
            workload = Workload.from_preset(net, batch=batch)
            for placement in (Placement.MRAM_STREAM, Placement.WRAM_RESIDENT):
                report = estimate_workload(workload, args.dpus, params,
                                           dtype, placement)
                writer.writerow([net.name, batch, args.dtype, placement.value,
                                 f"{report.stage_s:.9e}", f"{report.total_s:.9e}"])
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
