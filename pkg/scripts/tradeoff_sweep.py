#!/usr/bin/env python3
"""Error rate versus computation time by sweeping iteration budgets."""

import argparse
import pathlib
import shutil
import subprocess
import sys

from actdet import bench
from actdet.sysmodel import SystemConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/tradeoff.csv")
    parser.add_argument("--budgets", type=int, nargs="+",
                        default=[2, 5, 10, 20, 30, 50])
    parser.add_argument("--methods", nargs="+",
                        default=["psca-ml-k", "bcd-ml-k", "pg-ml-k"])
    parser.add_argument("--n-devices", type=int, default=200)
    parser.add_argument("--n-val", type=int, default=50)
    parser.add_argument("--n-test", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    base = SystemConfig(n_devices=args.n_devices, pilot_len=16, n_antennas=64)
    grid = bench.ExperimentGrid(methods=list(args.methods),
                                sweep_name="iterations",
                                sweep_values=list(args.budgets), base=base,
                                n_val=args.n_val, n_test=args.n_test,
                                seeds=[args.seed])
    rows = bench.run_grid(grid)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.write_csv(rows, out)
    print(f"wrote {len(rows)} rows -> {out}")
    if shutil.which("detplots"):
        subprocess.run(["detplots", "plot-curves", "--csv", str(out),
                        "--x", "mean_wall_time_s", "--y", "error_rate",
                        "--log-y", "--out", str(out.with_suffix(".png"))],
                       check=False)
    return 1 if any(r["error"] for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
