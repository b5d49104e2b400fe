"""Unified PSCA engine for the four detection problems.

Each iteration linearizes the covariance-fit objective around the current
point, adds a separable quadratic with the squared quadratic-form
coefficient (which tends to the Hessian diagonal as M grows), solves the
N one-dimensional problems in closed form (a clamped Newton-like step),
and blends the candidate with the current point using a diminishing step:

    x_next = (1 - rho_k) x + rho_k * clamp(x - grad/coef, lo, hi).

The same loop serves ML and MAP for known pathloss (x = activities in
[0,1]) and unknown pathloss (x = effective pathloss, nonnegative, with an
upper bound only when the pathloss prior supplies one).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from actdet import covlinalg, priors
from actdet.sysmodel import DomainError, Sample

KINDS = ("ml-k", "map-k", "ml-ud", "map-ur")


@dataclass(frozen=True)
class Problem:
    """Which objective is minimized; MAP kinds carry their prior."""

    kind: str
    prior: object | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown problem kind {self.kind!r}")
        if self.kind in ("map-k", "map-ur") and self.prior is None:
            raise DomainError(f"{self.kind} requires a prior")
        if self.kind in ("ml-k", "ml-ud") and self.prior is not None:
            raise DomainError(f"{self.kind} does not take a prior")

    @classmethod
    def ml_k(cls):
        return cls("ml-k")

    @classmethod
    def map_k(cls, prior):
        return cls("map-k", prior)

    @classmethod
    def ml_ud(cls):
        return cls("ml-ud")

    @classmethod
    def map_ur(cls, prior: priors.EffPathlossPrior):
        return cls("map-ur", prior)

    @property
    def known_pathloss(self) -> bool:
        return self.kind in ("ml-k", "map-k")


def default_schedule(k: int) -> float:
    """k-th step of the diminishing recursion rho <- rho (1 - rho/2), rho_0 = 1/2."""
    if k < 0:
        raise DomainError("iteration index must be >= 0")
    rho = 0.5
    for _ in range(k):
        rho = rho * (1.0 - 0.5 * rho)
    return rho


def default_steps(n: int) -> np.ndarray:
    """First n steps of the default schedule."""
    out = np.empty(n)
    rho = 0.5
    for i in range(n):
        out[i] = rho
        rho = rho * (1.0 - 0.5 * rho)
    return out


@dataclass
class StepSchedule:
    """Per-iteration step sizes: a rule k -> rho or an explicit vector."""

    fn: object | None = None
    steps: np.ndarray | None = None

    def __post_init__(self):
        if (self.fn is None) == (self.steps is None):
            raise DomainError("provide exactly one of fn or steps")
        if self.steps is not None:
            self.steps = np.asarray(self.steps, dtype=float)
            if np.any(self.steps <= 0.0) or np.any(self.steps > 1.0):
                raise DomainError("every step must lie in (0,1]")

    @classmethod
    def default(cls) -> "StepSchedule":
        return cls(fn=default_schedule)

    @classmethod
    def polynomial(cls, offset: float = 4.0, exponent: float = 0.8) -> "StepSchedule":
        """rho_k = (1 + k/offset)**-exponent, admissible for exponent in (1/2, 1].

        Decays far more slowly than the default recursion (whose steps behave
        like 2/k), so a fixed iteration budget accumulates much more step
        mass; useful when iterates must reach stationarity, not just a good
        detection point.
        """
        if not 0.5 < exponent <= 1.0:
            raise DomainError("exponent must lie in (0.5, 1] for admissibility")
        return cls(fn=lambda k: (1.0 + k / offset) ** -exponent)

    @classmethod
    def explicit(cls, steps) -> "StepSchedule":
        return cls(steps=steps)

    def __call__(self, k: int) -> float:
        if self.steps is not None:
            return float(self.steps[k])
        rho = float(self.fn(k))
        if not 0.0 < rho <= 1.0:
            raise DomainError(f"schedule produced step {rho} outside (0,1]")
        return rho


@dataclass
class DetectorTrace:
    """Per-iteration record of one detector run.

    iterates[0] is the initial point and iterates[k] the k-th update, so
    update_norm[k] = ||iterates[k+1] - iterates[k]||_2.  objective[k] is
    evaluated at iterates[k] with the covariance state already built
    there; wall_times cover only the algorithmic steps (covariance
    rebuild through the relaxed update), not objective bookkeeping.
    """

    iterates: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    update_norm: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    final: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        return len(self.update_norm)

    def dump_jsonl(self, path, method: str = ""):
        """One JSON record per iteration for external plotting."""
        with open(path, "a", encoding="utf-8") as fh:
            for k in range(self.n_iterations):
                rec = {
                    "method": method or self.meta.get("method", ""),
                    "iteration": k + 1,
                    "update_norm": self.update_norm[k],
                    "objective": self.objective[k] if k < len(self.objective) else None,
                    "wall_time_s": self.wall_times[k],
                }
                fh.write(json.dumps(rec) + "\n")


def bounds_for(problem: Problem, sample: Sample) -> tuple[float, float]:
    """Coordinate box (lo, hi) of the problem's feasible set."""
    if problem.known_pathloss:
        return 0.0, 1.0
    if problem.kind == "ml-ud":
        return 0.0, np.inf
    return 0.0, problem.prior.g_high


def gradient(problem: Problem, x: np.ndarray, state: covlinalg.CovState,
             gains: np.ndarray | None, n_antennas: int) -> np.ndarray:
    """Objective gradient at x given the covariance state built there."""
    diff = state.q - state.r
    if problem.kind == "ml-k":
        return gains * diff
    if problem.kind == "map-k":
        return gains * diff + priors.log_prior_grad_known(x, problem.prior, n_antennas)
    if problem.kind == "ml-ud":
        return diff
    return diff + priors.log_prior_grad_unknown(x, problem.prior, n_antennas)


def surrogate_coef(problem: Problem, state: covlinalg.CovState,
                   gains: np.ndarray | None) -> np.ndarray:
    """Separable quadratic weight: (g_n q_n)^2 known, q_n^2 unknown."""
    if problem.known_pathloss:
        return (gains * state.q) ** 2
    return state.q ** 2


def coord_solution(x: np.ndarray, grad: np.ndarray, coef: np.ndarray,
                   lo, hi) -> np.ndarray:
    """Minimizer of the separable surrogate: clamp(x - grad/coef, lo, hi)."""
    return np.clip(x - grad / coef, lo, hi)


def objective_value(problem: Problem, x: np.ndarray, sample: Sample,
                    state: covlinalg.CovState) -> float:
    """Full problem objective (covariance fit plus any prior penalty)."""
    val = covlinalg.eval_objective(state.sigma, state.sigma_inv, sample.emp_cov)
    if problem.kind == "map-k":
        val += priors.log_prior_value_known(x, problem.prior, sample.n_antennas)
    elif problem.kind == "map-ur":
        val += priors.log_prior_value_unknown(x, problem.prior, sample.n_antennas)
    return val


def _cov_weights(problem: Problem, x: np.ndarray, gains) -> np.ndarray:
    return x * gains if problem.known_pathloss else x


def build_state(problem: Problem, x: np.ndarray, sample: Sample,
                pilots_conj: np.ndarray | None = None) -> covlinalg.CovState:
    weights = _cov_weights(problem, x, sample.gains)
    return covlinalg.CovState.build(sample.pilots, weights, sample.noise_power,
                                    sample.emp_cov, pilots_conj)


def stationarity_residual(problem: Problem, x: np.ndarray, sample: Sample) -> float:
    """||x - clamp(x - grad, lo, hi)||_inf, the projected-gradient residual."""
    state = build_state(problem, x, sample)
    grad = gradient(problem, x, state, sample.gains, sample.n_antennas)
    lo, hi = bounds_for(problem, sample)
    return float(np.max(np.abs(x - np.clip(x - grad, lo, hi))))


# Lower bound sanity check on q_n: q = s^H Sigma^-1 s >= L / ||Sigma||_2
# >= L / ||Sigma||_F.  Falling well below the Frobenius version signals a
# broken inverse; checked with slack rather than silently regularized.
_Q_GUARD = 0.5


def psca_run(problem: Problem, sample: Sample, schedule: StepSchedule | None = None,
             max_iter: int = 30, tol: float = 1e-4,
             record_objective: bool = True) -> DetectorTrace:
    """Run the PSCA iteration from the all-zero start.

    Stops at max_iter or when the update norm drops below tol, whichever
    comes first.  The trace stores every iterate; wall_times measure the
    algorithmic steps only.
    """
    if schedule is None:
        schedule = StepSchedule.default()
    n = sample.n_devices
    x = np.zeros(n)
    lo, hi = bounds_for(problem, sample)
    pilots_conj = sample.pilots.conj()   # hoisted out of the hot loop
    trace = DetectorTrace(meta={"kind": problem.kind, "tol": tol})
    if problem.kind == "map-ur":
        trace.meta["dead_zone_grad"] = problem.prior.dead_zone_grad
    trace.iterates.append(x.copy())

    for k in range(max_iter):
        t0 = time.perf_counter()
        try:
            state = build_state(problem, x, sample, pilots_conj)
        except covlinalg.ConditioningError as exc:
            trace.meta["abort"] = str(exc)
            trace.final = x.copy()
            return trace
        q_floor = _Q_GUARD * sample.pilot_len / np.linalg.norm(state.sigma)
        if np.min(state.q) < q_floor:
            trace.meta["abort"] = "quadratic form underflow; inverse inconsistent"
            trace.final = x.copy()
            return trace
        grad = gradient(problem, x, state, sample.gains, sample.n_antennas)
        coef = surrogate_coef(problem, state, sample.gains)
        candidate = coord_solution(x, grad, coef, lo, hi)
        rho = schedule(k)
        x_new = (1.0 - rho) * x + rho * candidate
        elapsed = time.perf_counter() - t0

        if record_objective:
            trace.objective.append(objective_value(problem, x, sample, state))
        trace.wall_times.append(elapsed)
        trace.update_norm.append(float(np.linalg.norm(x_new - x)))
        x = x_new
        trace.iterates.append(x.copy())
        if trace.update_norm[-1] < tol:
            break

    trace.final = x.copy()
    return trace
