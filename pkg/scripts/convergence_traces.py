#!/usr/bin/env python3
"""Dump per-iteration traces of every detector on one scene.

Produces a JSON-lines file consumable by `detplots plot-convergence`.
"""

import argparse
import pathlib
import sys

from actdet import bench
from actdet.sysmodel import SystemConfig, gen_dataset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="traces.jsonl")
    parser.add_argument("--n-devices", type=int, default=200)
    parser.add_argument("--pilot-len", type=int, default=16)
    parser.add_argument("--n-antennas", type=int, default=64)
    parser.add_argument("--iterations", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--methods", nargs="+",
                        default=["psca-ml-k", "psca-map-k", "psca-ml-ud",
                                 "psca-map-ur", "bcd-ml-k", "pg-ml-k"])
    args = parser.parse_args()

    cfg = SystemConfig(n_devices=args.n_devices, pilot_len=args.pilot_len,
                       n_antennas=args.n_antennas)
    sample = gen_dataset(cfg, 1, args.seed)[0]
    out = pathlib.Path(args.out)
    out.write_text("")
    for method in args.methods:
        problem = bench.make_problem(method, cfg)
        iters = args.iterations if not method.startswith("bcd") \
            else max(2, args.iterations // 6)
        _, trace = bench.detect_soft(method, problem, sample, iters)
        trace.dump_jsonl(out, method=method)
        print(f"{method}: {trace.n_iterations} iterations, final update norm "
              f"{trace.update_norm[-1]:.3e}")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
