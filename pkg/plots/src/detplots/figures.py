"""Render benchmark curves and convergence traces to static image files.

Everything here is a pure function of the input files: the style is pinned
(Agg backend, fixed rcParams, no timestamps in metadata), so re-rendering
the same inputs produces identical bytes.
"""

from __future__ import annotations

import csv
import json
import pathlib
import warnings
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PINNED_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4.5,
}

_MARKERS = ["o", "s", "^", "v", "D", "x", "+", "*", "<", ">", "p", "h"]


class FigureError(ValueError):
    """Raised when the inputs cannot produce the requested figure."""


@dataclass
class FigureSpec:
    """What to draw: one line per `series_by` value, y over x."""

    x_axis: str
    y_axis: str
    series_by: str = "method"
    log_y: bool = False
    output: str = "figure.png"


def _read_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _column(rows, name):
    if rows and name not in rows[0]:
        raise FigureError(f"column {name!r} not present in CSV "
                          f"(have {sorted(rows[0])})")


def _save(fig, output):
    out = pathlib.Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, metadata={"Software": "detplots"})
    plt.close(fig)
    return out


def render_curves(csv_path, spec: FigureSpec):
    """One line per series with markers, legend and labeled axes.

    Rows that fail to parse as numbers (including rows carrying a nonempty
    `error` column) are skipped.  Multiple rows at the same x (seeds) are
    averaged.  A header-only CSV produces a blank figure and a warning.
    """
    rows = _read_csv(csv_path)
    if rows:
        for name in (spec.x_axis, spec.y_axis, spec.series_by):
            _column(rows, name)
    series: dict = {}
    for row in rows:
        if row.get("error"):
            continue
        try:
            x = float(row[spec.x_axis])
            y = float(row[spec.y_axis])
        except (TypeError, ValueError):
            continue
        series.setdefault(row[spec.series_by], {}).setdefault(x, []).append(y)

    with plt.rc_context(PINNED_STYLE):
        fig, ax = plt.subplots()
        if not series:
            warnings.warn("no plottable rows; emitting a blank figure")
        for i, (name, points) in enumerate(sorted(series.items())):
            xs = np.array(sorted(points))
            ys = np.array([np.mean(points[x]) for x in xs])
            ax.plot(xs, ys, marker=_MARKERS[i % len(_MARKERS)], label=name)
        if spec.log_y:
            ax.set_yscale("log")
        ax.set_xlabel(spec.x_axis)
        ax.set_ylabel(spec.y_axis)
        if series:
            ax.legend(loc="best", fontsize=8)
        return _save(fig, spec.output)


def render_convergence(trace_path, output, log_y: bool = True):
    """Per-method update-norm curves from a JSON-lines trace file.

    Malformed lines are skipped; their count is returned along with the
    output path.
    """
    series: dict = {}
    skipped = 0
    with open(trace_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                method = rec["method"]
                it = int(rec["iteration"])
                norm = float(rec["update_norm"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
                continue
            series.setdefault(method, {}).setdefault(it, []).append(norm)

    with plt.rc_context(PINNED_STYLE):
        fig, ax = plt.subplots()
        if not series:
            warnings.warn("no plottable trace records; emitting a blank figure")
        for i, (name, points) in enumerate(sorted(series.items())):
            its = np.array(sorted(points))
            norms = np.array([np.mean(points[t]) for t in its])
            ax.plot(its, norms, marker=_MARKERS[i % len(_MARKERS)], label=name)
        if log_y and series:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("update norm")
        if series:
            ax.legend(loc="best", fontsize=8)
        path = _save(fig, output)
    return path, skipped
