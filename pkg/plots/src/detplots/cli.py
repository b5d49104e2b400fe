"""Command-line figure rendering: plot-curves and plot-convergence."""

from __future__ import annotations

import argparse
import sys

from detplots.figures import FigureError, FigureSpec, render_convergence, \
    render_curves


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="detplots",
                                     description="Benchmark figure emitter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plot-curves", help="one line per series from a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", required=True, help="x-axis column name")
    p.add_argument("--y", required=True, help="y-axis column name")
    p.add_argument("--series", default="method", help="series column (default: method)")
    p.add_argument("--log-y", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot-convergence", help="update-norm curves from trace JSONL")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--linear-y", action="store_true")

    args = parser.parse_args(argv)
    try:
        if args.command == "plot-curves":
            spec = FigureSpec(x_axis=args.x, y_axis=args.y, series_by=args.series,
                              log_y=args.log_y, output=args.out)
            out = render_curves(args.csv, spec)
            print(f"wrote {out}")
        else:
            out, skipped = render_convergence(args.trace, args.out,
                                              log_y=not args.linear_y)
            suffix = f" ({skipped} malformed lines skipped)" if skipped else ""
            print(f"wrote {out}{suffix}")
    except (FigureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
