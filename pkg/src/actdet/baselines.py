"""Sequential and first-order reference detectors.

BCD sweeps the devices in ascending index order, solving each coordinate
problem exactly on the rank-1-perturbed covariance and refreshing the
inverse with the Woodbury identity, so a full sweep costs N rank-1
updates instead of one dense inversion.  PG is the parallel first-order
counterpart: one projected gradient step per iteration, with either a
fixed step or a Grippo-style non-monotone line search seeded by a
Barzilai-Borwein step.
"""

from __future__ import annotations

import time
from collections import deque

import numpy as np
import scipy.linalg

from actdet import covlinalg, priors
from actdet.estimators import DetectorTrace, Problem, bounds_for, build_state
from actdet.sysmodel import DomainError, Sample


def _coordinate_objective(x_new: float, x_old: float, gq: float, gr: float,
                          prior_slope: float) -> float:
    """Exact objective change along one coordinate (constants dropped).

    Moving coordinate n by delta changes the fit term by
    log(1 + delta*g*q) - delta*g*r/(1 + delta*g*q) and the prior penalty
    linearly with slope prior_slope.
    """
    delta = x_new - x_old
    u = 1.0 + delta * gq
    return np.log(u) - delta * gr / u + prior_slope * x_new


def _stationary_root(gq: float, gr: float, slope: float) -> float:
    """Smallest positive root u of slope*u^2 + gq*u - gr = 0.

    In u = 1 + delta*g*q coordinates this is the interior stationary point
    of the exact coordinate objective; written in rationalized form it is
    stable as slope -> 0, where it degenerates to the fit-only optimum
    u = r/q.
    """
    disc = gq * gq + 4.0 * slope * gr
    return 2.0 * gr / (gq + np.sqrt(disc))


def bcd_ml(sample: Sample, known: bool = True, max_iter: int = 5) -> DetectorTrace:
    """Sequential exact coordinate descent on the covariance-fit objective.

    known=True estimates activities in [0,1]; known=False estimates the
    effective pathloss on [0, inf).  One trace entry per full sweep.
    """
    problem = Problem.ml_k() if known else Problem.ml_ud()
    return _bcd_run(problem, sample, max_iter)


def bcd_map_k(sample: Sample, prior, max_iter: int = 5) -> DetectorTrace:
    """Sequential coordinate descent on the known-pathloss MAP objective.

    The coordinate problems are non-convex: with the per-coordinate prior
    slope t, the exact objective has a unique interior minimum when
    t >= 0, two interior stationary points (min then max) when t < 0 and
    the discriminant stays positive, and none otherwise, in which case
    the upper bound 1 wins.  The middle case is settled by comparing the
    exact objective at the root and both box endpoints.
    """
    problem = Problem.map_k(prior)
    return _bcd_run(problem, sample, max_iter)


def _bcd_run(problem: Problem, sample: Sample, max_iter: int) -> DetectorTrace:
    pilots, emp_cov = sample.pilots, sample.emp_cov
    n = sample.n_devices
    gains = sample.gains if problem.known_pathloss else np.ones(n)
    hi = 1.0 if problem.known_pathloss else np.inf
    x = np.zeros(n)
    sigma_inv = np.eye(sample.pilot_len, dtype=complex) / sample.noise_power
    trace = DetectorTrace(meta={"kind": problem.kind, "algorithm": "bcd"})
    trace.iterates.append(x.copy())

    for _ in range(max_iter):
        t0 = time.perf_counter()
        for idx in range(n):
            s = pilots[:, idx]
            g = gains[idx]
            u = sigma_inv @ s
            q = float(np.real(s.conj() @ u))
            r = float(np.real(u.conj() @ (emp_cov @ u)))
            gq, gr = g * q, g * r
            if problem.kind == "map-k":
                slope = float(priors.log_prior_grad_known(x, problem.prior,
                                                          sample.n_antennas)[idx])
            else:
                slope = 0.0
            x_new = _bcd_coordinate(x[idx], gq, gr, slope, hi)
            delta_w = (x_new - x[idx]) * g
            if delta_w != 0.0:
                sigma_inv = covlinalg.woodbury_rank1(sigma_inv, s, delta_w)
            x[idx] = x_new
        elapsed = time.perf_counter() - t0

        trace.wall_times.append(elapsed)
        trace.update_norm.append(float(np.linalg.norm(x - trace.iterates[-1])))
        sigma = covlinalg.cov_unknown(pilots, x * gains, sample.noise_power)
        obj = covlinalg.eval_objective(sigma, sigma_inv, emp_cov)
        if problem.kind == "map-k":
            obj += priors.log_prior_value_known(x, problem.prior, sample.n_antennas)
        trace.objective.append(obj)
        trace.iterates.append(x.copy())

    trace.final = x.copy()
    return trace


def _bcd_coordinate(x_old: float, gq: float, gr: float, slope: float,
                    hi: float) -> float:
    """Exact minimizer of one coordinate problem on [0, hi]."""
    if slope >= 0.0:
        # Unique interior stationary point; the objective falls then rises,
        # so clamping it to the box is exact.  slope == 0 is the fit-only
        # update x_old + (r - q)/(g q^2).
        u_star = _stationary_root(gq, gr, slope) if slope > 0.0 else gr / gq
        cand = x_old + (u_star - 1.0) / gq
        return float(np.clip(cand, 0.0, hi))
    disc = gq * gq + 4.0 * slope * gr
    if disc <= 0.0:
        # No stationary point: the objective decreases toward the upper bound.
        return float(min(1.0, hi))
    root = float(np.clip(x_old + (_stationary_root(gq, gr, slope) - 1.0) / gq, 0.0, hi))
    top = float(min(1.0, hi))
    candidates = (root, 0.0, top)
    values = [_coordinate_objective(c, x_old, gq, gr, slope) for c in candidates]
    return candidates[int(np.argmin(values))]


def _make_objective(problem: Problem, sample: Sample):
    """Covariance-fit objective of x alone, via one Cholesky per call."""
    pilots, emp_cov = sample.pilots, sample.emp_cov
    gains = sample.gains

    def f(x: np.ndarray) -> float:
        w = x * gains if problem.known_pathloss else x
        sigma = covlinalg.cov_unknown(pilots, w, sample.noise_power)
        factor = scipy.linalg.cho_factor(sigma, lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(factor[0])))))
        trace = float(np.real(np.trace(
            scipy.linalg.cho_solve(factor, emp_cov, check_finite=False))))
        return logdet + trace

    return f


def pg_ml(sample: Sample, known: bool = True, max_iter: int = 30,
          step_mode: str = "nonmonotone", d0: float | None = None,
          window: int = 10) -> DetectorTrace:
    """Parallel projected gradient on the covariance-fit objective.

    step_mode "fixed" uses the supplied d0 every iteration; "nonmonotone"
    starts from a Barzilai-Borwein step (clipped to [1e-12, 1e12]) and
    backtracks until the Grippo condition against the worst of the last
    `window` objective values holds; "spectral" takes the Barzilai-Borwein
    step without any line search, which is the flavor whose per-iteration
    cost the complexity model counts.  After 30 failed backtracks the last
    accepted step is reused and the failure is flagged in the trace.
    """
    if step_mode not in ("fixed", "nonmonotone", "spectral"):
        raise DomainError(f"unknown step mode {step_mode!r}")
    if step_mode == "fixed" and d0 is None:
        raise DomainError("fixed step mode requires d0")
    problem = Problem.ml_k() if known else Problem.ml_ud()
    lo, hi = bounds_for(problem, sample)
    f = _make_objective(problem, sample)
    n = sample.n_devices
    x = np.zeros(n)
    trace = DetectorTrace(meta={"kind": problem.kind, "algorithm": "pg",
                                "step_mode": step_mode, "line_search_failures": 0})
    trace.iterates.append(x.copy())

    history: deque[float] = deque(maxlen=window)
    prev_x = prev_grad = None
    last_safe = None
    suff_dec = 1e-4

    for _ in range(max_iter):
        t0 = time.perf_counter()
        state = build_state(problem, x, sample)
        grad = state.q - state.r
        if problem.known_pathloss:
            grad = sample.gains * grad
        f_cur = covlinalg.eval_objective(state.sigma, state.sigma_inv, sample.emp_cov)
        history.append(f_cur)

        if step_mode == "fixed":
            d = d0
            x_new = np.clip(x - d * grad, lo, hi)
        elif step_mode == "spectral":
            d = _bb_step(x, grad, prev_x, prev_grad)
            x_new = np.clip(x - d * grad, lo, hi)
        else:
            d = _bb_step(x, grad, prev_x, prev_grad)
            if last_safe is not None and not np.isfinite(d):
                d = last_safe
            f_ref = max(history)
            x_new, d, ok = _backtrack(f, x, grad, d, f_ref, suff_dec, lo, hi)
            if not ok:
                trace.meta["line_search_failures"] += 1
                if last_safe is not None:
                    d = last_safe
                    x_new = np.clip(x - d * grad, lo, hi)
            else:
                last_safe = d
        elapsed = time.perf_counter() - t0

        trace.wall_times.append(elapsed)
        trace.objective.append(f_cur)
        trace.update_norm.append(float(np.linalg.norm(x_new - x)))
        prev_x, prev_grad = x, grad
        x = x_new
        trace.iterates.append(x.copy())

    trace.final = x.copy()
    return trace


def _bb_step(x, grad, prev_x, prev_grad) -> float:
    """Spectral initial step s.y/y.y (the shorter BB step), clipped to [1e-12, 1e12].

    The first iteration, with no curvature pair yet, scales the step so the
    largest coordinate moves by one unit.
    """
    if prev_x is None:
        d = 1.0 / max(float(np.max(np.abs(grad))), 1e-12)
    else:
        s = x - prev_x
        y = grad - prev_grad
        sy = float(s @ y)
        d = sy / float(y @ y) if sy > 0 else 1.0 / max(float(np.max(np.abs(grad))), 1e-12)
    return float(np.clip(d, 1e-12, 1e12))


def _backtrack(f, x, grad, d, f_ref, suff_dec, lo, hi, max_tries: int = 30):
    """Halve d until f(proj(x - d grad)) <= f_ref + suff_dec * grad.(x_new - x)."""
    for _ in range(max_tries):
        x_new = np.clip(x - d * grad, lo, hi)
        decrease = float(grad @ (x_new - x))
        if f(x_new) <= f_ref + suff_dec * decrease:
            return x_new, d, True
        d *= 0.5
    return np.clip(x - d * grad, lo, hi), d, False
