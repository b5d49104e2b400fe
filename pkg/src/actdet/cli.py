"""Command-line interface: dataset generation, grid runs, net training, reports."""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from actdet import bench, unroll
from actdet.sysmodel import ActivityModel, SystemConfig, gen_dataset, save_scenes


def config_from_dict(d: dict) -> SystemConfig:
    d = dict(d)
    if "activity" in d and isinstance(d["activity"], dict):
        d["activity"] = ActivityModel(**d["activity"])
    return SystemConfig(**d)


def grid_from_dict(d: dict, base: SystemConfig) -> bench.ExperimentGrid:
    d = dict(d)
    d["base"] = base
    return bench.ExperimentGrid(**d)


def _load_config(path) -> dict:
    return json.loads(pathlib.Path(path).read_text())


def _cmd_gen_data(args) -> int:
    raw = _load_config(args.config)
    cfg = config_from_dict(raw.get("system", raw))
    samples = gen_dataset(cfg, args.n, args.seed)
    save_scenes(args.out, samples, cfg, args.seed)
    print(f"wrote {args.n} scenes to {args.out}")
    return 0


def _cmd_run(args) -> int:
    raw = _load_config(args.config)
    cfg = config_from_dict(raw.get("system", {}))
    grid_dict = raw.get("grid", {})
    if args.methods:
        grid_dict["methods"] = args.methods.split(",")
    if args.sweep:
        name, _, values = args.sweep.partition("=")
        grid_dict["sweep_name"] = name
        grid_dict["sweep_values"] = [float(v) if "." in v else int(v)
                                     for v in values.split(",")]
    if args.seed is not None:
        grid_dict["seeds"] = [args.seed]
    grid = grid_from_dict(grid_dict, cfg)
    if args.dump_traces:
        pathlib.Path(args.dump_traces).write_text("")  # truncate
    rows = bench.run_grid(grid, workers=args.workers, dump_traces=args.dump_traces)
    bench.write_csv(rows, args.out)
    failures = [r for r in rows if r["error"]]
    print(f"wrote {len(rows)} rows to {args.out} ({len(failures)} failed)")
    return 1 if failures else 0


def _cmd_train_net(args) -> int:
    raw = _load_config(args.config)
    cfg = config_from_dict(raw.get("system", raw))
    method = f"psca-{args.kind}-net"
    problem = bench.make_problem(method, cfg)
    net_cfg = unroll.UnrolledConfig.with_default_schedule(
        problem, args.blocks, prior_params_trainable=args.train_prior)
    train_set = gen_dataset(cfg, args.n_train, [args.seed, 0])
    val_set = gen_dataset(cfg, args.n_val, [args.seed, 1])
    report = unroll.train(net_cfg, train_set, val_set, budget=args.budget,
                          seed=args.seed)
    fingerprint = {"seed": args.seed, "n_train": args.n_train, "n_val": args.n_val}
    echo = raw.get("system", raw)
    unroll.save_model(args.out, net_cfg, report, echo, fingerprint)
    print(f"trained {method}: val loss {report.val_loss_curve[0]:.6g} -> "
          f"{min(report.val_loss_curve):.6g}, threshold {report.threshold:.4g}; "
          f"wrote {args.out}")
    return 0


def _cmd_report(args) -> int:
    text = bench.summarize(args.csv)
    if args.out:
        pathlib.Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="actdet",
        description="Covariance-based device activity detection benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and persist a scene batch")
    p.add_argument("--config", required=True, help="JSON with a 'system' section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run a method x sweep grid and emit CSV")
    p.add_argument("--config", required=True, help="JSON with 'system' and 'grid'")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="replace the seed list")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--methods", default=None, help="comma-separated method ids")
    p.add_argument("--sweep", default=None, help="name=v1,v2,... overriding the grid sweep")
    p.add_argument("--dump-traces", default=None, help="JSONL path for first-sample traces")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("train-net", help="train an unrolled detector")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", required=True, choices=["ml-k", "map-k", "ml-ud", "map-ur"])
    p.add_argument("--blocks", type=int, default=15)
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--budget", type=int, default=400)
    p.add_argument("--n-train", type=int, default=128)
    p.add_argument("--n-val", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-prior", action="store_true")
    p.set_defaults(func=_cmd_train_net)

    p = sub.add_parser("report", help="aggregate a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
