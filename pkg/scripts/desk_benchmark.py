#!/usr/bin/env python3
"""Desk-scale benchmark: error rate and timing over L and M sweeps.

Runs the default method set on the standard scenario (N devices at 23 dBm,
annulus 20-200 m) and writes one CSV per sweep plus figures if detplots is
installed.  Expect minutes of runtime at the default sizes.
"""

import argparse
import pathlib
import shutil
import subprocess
import sys

from actdet import bench
from actdet.sysmodel import SystemConfig

METHODS = ["psca-ml-k", "psca-map-k", "psca-ml-ud", "psca-map-ur",
           "bcd-ml-k", "bcd-map-k", "bcd-ml-ud", "pg-ml-k", "pg-ml-ud"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--n-devices", type=int, default=200)
    parser.add_argument("--n-val", type=int, default=100)
    parser.add_argument("--n-test", type=int, default=200)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--methods", nargs="+", default=METHODS)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # pilot_len here is a placeholder; every sweep point overrides it
    base = SystemConfig(n_devices=args.n_devices, pilot_len=16)

    sweeps = {
        "l_sweep": dict(sweep_name="L", sweep_values=[10, 16, 24, 32],
                        base=base.replace(n_antennas=64)),
        "m_sweep": dict(sweep_name="M", sweep_values=[32, 64, 128],
                        base=base.replace(pilot_len=16)),
    }
    for name, kwargs in sweeps.items():
        grid = bench.ExperimentGrid(methods=list(args.methods),
                                    n_val=args.n_val, n_test=args.n_test,
                                    seeds=list(args.seeds), **kwargs)
        rows = bench.run_grid(grid, workers=args.workers)
        csv_path = out_dir / f"{name}.csv"
        bench.write_csv(rows, csv_path)
        failures = sum(1 for r in rows if r["error"])
        print(f"{name}: {len(rows)} rows -> {csv_path} ({failures} failed)")
        if shutil.which("detplots"):
            x = kwargs["sweep_name"]
            subprocess.run(["detplots", "plot-curves", "--csv", str(csv_path),
                            "--x", x, "--y", "error_rate", "--log-y",
                            "--out", str(out_dir / f"{name}_error.png")],
                           check=False)
        if failures:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
