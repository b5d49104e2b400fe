"""Figure emitter for benchmark CSVs and per-iteration trace files."""

from detplots.figures import FigureSpec, render_convergence, render_curves

__all__ = ["FigureSpec", "render_curves", "render_convergence"]
