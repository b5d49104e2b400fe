#!/usr/bin/env python3
"""Tune the step sizes of the four unrolled detectors and save the models."""

import argparse
import pathlib
import sys

from actdet import bench, unroll
from actdet.sysmodel import SystemConfig, gen_dataset, normalize_noise


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="models")
    parser.add_argument("--kinds", nargs="+",
                        default=["ml-k", "map-k", "ml-ud", "map-ur"])
    parser.add_argument("--blocks", type=int, default=15)
    parser.add_argument("--n-train", type=int, default=128)
    parser.add_argument("--n-val", type=int, default=64)
    parser.add_argument("--budget", type=int, default=800)
    parser.add_argument("--n-devices", type=int, default=200)
    parser.add_argument("--pilot-len", type=int, default=16)
    parser.add_argument("--n-antennas", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = SystemConfig(n_devices=args.n_devices, pilot_len=args.pilot_len,
                       n_antennas=args.n_antennas)
    train_set = [normalize_noise(s)
                 for s in gen_dataset(cfg, args.n_train, [args.seed, 0])]
    val_set = [normalize_noise(s)
               for s in gen_dataset(cfg, args.n_val, [args.seed, 1])]
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for kind in args.kinds:
        problem = bench.make_problem(f"psca-{kind}-net", cfg)
        net = unroll.UnrolledConfig.with_default_schedule(problem, args.blocks)
        report = unroll.train(net, train_set, val_set, budget=args.budget,
                              seed=args.seed)
        path = out_dir / f"psca-{kind}-net.json"
        unroll.save_model(path, net, report,
                          config_echo={"n_devices": cfg.n_devices,
                                       "pilot_len": cfg.pilot_len,
                                       "n_antennas": cfg.n_antennas},
                          fingerprint={"seed": args.seed,
                                       "n_train": args.n_train,
                                       "n_val": args.n_val})
        print(f"{kind}: val loss {report.val_loss_curve[0]:.5f} -> "
              f"{min(report.val_loss_curve):.5f}, threshold "
              f"{report.threshold:.4f} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
