#!/usr/bin/env python3
"""DPU-count scaling study: cost curves for Net1 and Net2.

Writes one CSV per network with the per-phase estimates at each DPU
count and prints the optimum, showing the allocation-vs-kernel-time
tradeoff that makes mid-sized allocations win for the smaller network.
"""

import argparse

from pimsim.cli import main as cli_main


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dpus", default="256,512,1024,2048")
    parser.add_argument("--dtype", default="fp32", choices=["fp32", "int32", "int8"])
    parser.add_argument("--out-prefix", default="dpu_scaling")
    args = parser.parse_args()

    for name in ("Net1", "Net2"):
        out = f"{args.out_prefix}_{name.lower()}_{args.dtype}.csv"
        rc = cli_main(["sweep", "--preset", name, "--dpus", args.dpus,
                       "--dtype", args.dtype, "--out", out])
        if rc != 0:
            raise SystemExit(rc)
        print(f"{name}: wrote {out}")


if __name__ == "__main__":
    main()
