"""Unrolled detectors: fixed-depth PSCA with tunable per-block step sizes.

A net with U blocks is exactly the PSCA iteration truncated at U (no
early stop), so the forward pass reuses psca_run verbatim.  The U step
sizes (and optionally a couple of tied prior parameters) are tuned by
derivative-free search on the binary cross-entropy between soft outputs
and true activities: cyclic golden-section sweeps over each log-step,
then SPSA refinement.  Hard decisions use a threshold picked by
exhaustive search on validation data, the same rule every detector in the
harness shares.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from actdet import priors
from actdet.estimators import Problem, StepSchedule, default_steps, psca_run
from actdet.sysmodel import DomainError, Sample

_CLAMP = 1e-6
_LOG_STEP_BOUNDS = (math.log(1e-3), 0.0)   # steps confined to (0.001, 1]
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class UnrolledConfig:
    """Fixed-depth detector: problem kind, U blocks, per-block steps."""

    problem: Problem
    steps: np.ndarray
    prior_params_trainable: bool = False

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=float)
        if self.steps.ndim != 1 or self.steps.size < 1:
            raise DomainError("need at least one block")
        if np.any(self.steps <= 0.0) or np.any(self.steps > 1.0):
            raise DomainError("every step must lie in (0,1]")
        if self.prior_params_trainable and self.problem.prior is None:
            raise DomainError("no prior to train")

    @property
    def n_blocks(self) -> int:
        return int(self.steps.size)

    @classmethod
    def with_default_schedule(cls, problem: Problem, n_blocks: int,
                              prior_params_trainable: bool = False) -> "UnrolledConfig":
        return cls(problem, default_steps(n_blocks), prior_params_trainable)


@dataclass
class TrainReport:
    train_loss_curve: list = field(default_factory=list)
    val_loss_curve: list = field(default_factory=list)
    best_steps: np.ndarray | None = None
    best_prior_params: np.ndarray | None = None
    threshold: float = 0.5
    stopped_epoch: int = 0
    budget_exhausted: bool = False


def forward(cfg: UnrolledConfig, sample: Sample) -> np.ndarray:
    """Soft estimates: PSCA truncated at n_blocks with the stored steps."""
    trace = psca_run(cfg.problem, sample, StepSchedule.explicit(cfg.steps),
                     max_iter=cfg.n_blocks, tol=0.0, record_objective=False)
    return trace.final


def bce_loss(soft, truth, known: bool, gains=None) -> float:
    """Mean binary cross-entropy over samples and devices.

    Unknown-pathloss outputs are effective-pathloss estimates; they are
    mapped to pseudo-probabilities by dividing by the (positive) gains and
    clamping to [1e-6, 1 - 1e-6], the same clamp applied to the known case
    so endpoint outputs stay finite.
    """
    soft = np.atleast_2d(np.asarray(soft, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if soft.shape != truth.shape:
        raise DomainError("soft/truth shape mismatch")
    if not known:
        if gains is None:
            raise DomainError("unknown-pathloss loss needs the gains")
        gains = np.atleast_2d(np.asarray(gains, dtype=float))
        if np.any(gains <= 0):
            raise DomainError("gains must be strictly positive")
        soft = soft / gains
    u = np.clip(soft, _CLAMP, 1.0 - _CLAMP)
    return float(np.mean(-(truth * np.log(u) + (1.0 - truth) * np.log(1.0 - u))))


# ---------------------------------------------------------------------------
# Derivative-free training
# ---------------------------------------------------------------------------

def _shift_prior(problem: Problem, params: np.ndarray) -> Problem:
    """Rebuild the problem with tied offsets applied to the prior parameters.

    Independent prior: one offset on every log-odds.  Pairwise MVB: one
    offset on c1 and one on the nonzero c2 entries.  Effective-pathloss
    prior: one offset on logit(p).
    """
    if params.size == 0 or problem.prior is None:
        return problem
    prior = problem.prior
    if isinstance(prior, priors.IndependentPrior):
        p = 1.0 / (1.0 + np.exp(-(prior.log_odds + params[0])))
        return Problem.map_k(priors.IndependentPrior(np.clip(p, 1e-9, 1 - 1e-9)))
    if isinstance(prior, priors.PairwiseMvbPrior):
        c2 = prior.c2.copy()
        c2.data = c2.data + params[1]
        return Problem.map_k(priors.PairwiseMvbPrior(prior.c1 + params[0], c2))
    if isinstance(prior, priors.EffPathlossPrior):
        logit = np.log(prior.p / (1.0 - prior.p)) + params[0]
        p = np.clip(1.0 / (1.0 + np.exp(-logit)), 1e-9, 1 - 1e-9)
        return Problem.map_ur(dataclasses.replace(prior, p=p))
    raise DomainError(f"cannot train prior of type {type(prior).__name__}")


def _n_prior_params(problem: Problem) -> int:
    if isinstance(problem.prior, priors.PairwiseMvbPrior):
        return 2
    return 1 if problem.prior is not None else 0


class _Evaluator:
    """BCE of a parameter vector on a set of samples, with a budget."""

    def __init__(self, cfg: UnrolledConfig, budget: int):
        self.cfg = cfg
        self.known = cfg.problem.known_pathloss
        self.n_steps = cfg.n_blocks
        self.calls = 0
        self.budget = budget

    def split(self, theta: np.ndarray):
        log_steps = theta[:self.n_steps]
        return np.exp(log_steps), theta[self.n_steps:]

    def problem_for(self, prior_params: np.ndarray) -> Problem:
        if self.cfg.prior_params_trainable and prior_params.size:
            return _shift_prior(self.cfg.problem, prior_params)
        return self.cfg.problem

    def soft_outputs(self, theta: np.ndarray, samples) -> np.ndarray:
        steps, prior_params = self.split(theta)
        problem = self.problem_for(prior_params)
        run_cfg = UnrolledConfig(problem, steps)
        return np.stack([forward(run_cfg, s) for s in samples])

    def loss(self, theta: np.ndarray, samples) -> float:
        self.calls += 1
        soft = self.soft_outputs(theta, samples)
        truth = np.stack([s.activities for s in samples])
        gains = None if self.known else np.stack([s.gains for s in samples])
        return bce_loss(soft, truth, self.known, gains)

    @property
    def exhausted(self) -> bool:
        return self.calls >= self.budget


def _golden_section(fun, lo: float, hi: float, n_iter: int = 12):
    """Golden-section minimization of a unimodal-ish scalar function."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(n_iter):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def _batches(samples, batch_size: int):
    if len(samples) <= batch_size:
        return [list(samples)]
    return [list(samples[i:i + batch_size])
            for i in range(0, len(samples), batch_size)]


def train(cfg: UnrolledConfig, train_set, val_set, budget: int = 5000,
          batch_size: int = 64, gs_sweeps: int = 3, spsa_iters: int = 100,
          seed: int = 0) -> TrainReport:
    """Tune the step sizes (and tied prior offsets) by derivative-free search.

    Three cyclic golden-section sweeps over each log-step on a fixed batch
    per sweep, then SPSA refinement (c=0.05, a=0.1, standard decay) with
    rotating batches.  Validation BCE is checked after every phase;
    training stops early once it improves by less than 1e-4 relative over
    five consecutive checks.  The parameters best on validation win, so
    the returned net is never worse there than the initial one.
    """
    if not train_set or not val_set:
        raise DomainError("train and validation sets must be nonempty")
    ev = _Evaluator(cfg, budget)
    n_prior = _n_prior_params(cfg.problem) if cfg.prior_params_trainable else 0
    theta = np.concatenate([np.log(cfg.steps), np.zeros(n_prior)])
    lo, hi = _LOG_STEP_BOUNDS
    batches = _batches(train_set, batch_size)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    report = TrainReport()
    val_loss = ev.loss(theta, val_set)
    best_theta, best_val = theta.copy(), val_loss
    report.val_loss_curve.append(val_loss)
    stall = 0
    phase = 0

    def check_validation(theta):
        nonlocal best_theta, best_val, stall, phase
        v = ev.loss(theta, val_set)
        report.val_loss_curve.append(v)
        phase += 1
        if v < best_val * (1.0 - 1e-4):
            stall = 0
        else:
            stall += 1
        if v < best_val:
            best_val = v
            best_theta = theta.copy()
        return stall >= 5

    stop = False
    batch = batches[0]
    for sweep in range(gs_sweeps):
        batch = batches[sweep % len(batches)]
        for i in range(theta.size):
            def along(v, i=i, batch=batch):
                t = theta.copy()
                t[i] = v
                return ev.loss(t, batch)

            f_cur = along(theta[i])
            span = (lo, hi) if i < ev.n_steps else (-4.0, 4.0)
            cand, f_best = _golden_section(along, *span)
            if f_best < f_cur:   # keep the incumbent unless the probe wins
                theta[i] = cand
            if ev.exhausted:
                report.budget_exhausted = True
                break
        report.train_loss_curve.append(ev.loss(theta, batch))
        stop = check_validation(theta)
        if stop or report.budget_exhausted:
            break

    if not stop and not report.budget_exhausted:
        a0, c0 = 0.1, 0.05
        for k in range(spsa_iters):
            batch = batches[k % len(batches)]
            ck = c0 / (k + 1) ** 0.101
            ak = a0 / (k + 1 + 10) ** 0.602
            delta = rng.choice([-1.0, 1.0], size=theta.size)
            f_plus = ev.loss(_clip_theta(theta + ck * delta, ev.n_steps, lo, hi), batch)
            f_minus = ev.loss(_clip_theta(theta - ck * delta, ev.n_steps, lo, hi), batch)
            ghat = (f_plus - f_minus) / (2.0 * ck) * delta
            theta = _clip_theta(theta - ak * ghat, ev.n_steps, lo, hi)
            if (k + 1) % 20 == 0:
                report.train_loss_curve.append(ev.loss(theta, batch))
                if check_validation(theta):
                    break
            if ev.exhausted:
                report.budget_exhausted = True
                break

    report.stopped_epoch = phase
    report.best_steps, prior_params = ev.split(best_theta)
    report.best_prior_params = prior_params if prior_params.size else None

    best_cfg = UnrolledConfig(ev.problem_for(prior_params if prior_params.size
                                             else np.empty(0)), report.best_steps)
    soft = [forward(best_cfg, s) for s in val_set]
    if cfg.problem.known_pathloss:
        scores = soft
    else:
        scores = [s / smp.gains for s, smp in zip(soft, val_set)]
    report.threshold = calibrate_threshold(scores, [s.activities for s in val_set])
    return report


def _clip_theta(theta, n_steps, lo, hi):
    out = theta.copy()
    out[:n_steps] = np.clip(out[:n_steps], lo, hi)
    out[n_steps:] = np.clip(out[n_steps:], -4.0, 4.0)
    return out


# ---------------------------------------------------------------------------
# Threshold calibration and prediction
# ---------------------------------------------------------------------------

def calibrate_threshold(soft_outputs, truths) -> float:
    """Error-minimizing threshold from a finite candidate set.

    Candidates are the midpoints of consecutive distinct soft values plus
    0.5; the decision rule is score >= theta.  Ties go to the smallest
    candidate.
    """
    soft = np.concatenate([np.ravel(np.asarray(s, dtype=float)) for s in soft_outputs])
    truth = np.concatenate([np.ravel(np.asarray(t, dtype=float)) for t in truths])
    if soft.size == 0:
        raise DomainError("empty validation outputs")
    distinct = np.unique(soft)
    candidates = np.unique(np.concatenate([
        (distinct[:-1] + distinct[1:]) / 2.0 if distinct.size > 1 else np.empty(0),
        [0.5],
    ]))

    order = np.argsort(soft, kind="stable")
    sorted_soft = soft[order]
    sorted_truth = truth[order]
    n = soft.size
    actives_prefix = np.concatenate([[0.0], np.cumsum(sorted_truth)])
    total_active = actives_prefix[-1]
    # With cut index c (first predicted-active position), errors =
    # actives below the cut + inactives at or above it.
    cuts = np.searchsorted(sorted_soft, candidates, side="left")
    errors = (actives_prefix[cuts] + (n - cuts) - (total_active - actives_prefix[cuts])) / n
    best = int(np.argmin(errors))   # argmin returns the first, i.e. smallest theta
    return float(candidates[best])


def predict(cfg: UnrolledConfig, threshold: float, sample: Sample,
            normalize_unknown: bool = True) -> np.ndarray:
    """Hard activity decision: indicator(score >= threshold).

    Unknown-pathloss scores are gamma/g when normalize_unknown is set
    (matching the training scale); raw effective-pathloss estimates
    otherwise.
    """
    soft = forward(cfg, sample)
    if not cfg.problem.known_pathloss and normalize_unknown:
        soft = soft / sample.gains
    return (soft >= threshold).astype(float)


def decide(soft: np.ndarray, threshold: float) -> np.ndarray:
    """Thresholding rule shared by every detector: score >= theta."""
    return (np.asarray(soft) >= threshold).astype(float)


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------

def save_model(path, cfg: UnrolledConfig, report: TrainReport,
               config_echo: dict, fingerprint: dict):
    """Serialize trained parameters with a config echo and data fingerprint."""
    payload = {
        "kind": cfg.problem.kind,
        "n_blocks": cfg.n_blocks,
        "steps": list(map(float, report.best_steps)),
        "prior_params": None if report.best_prior_params is None
        else list(map(float, report.best_prior_params)),
        "threshold": report.threshold,
        "stopped_epoch": report.stopped_epoch,
        "config": config_echo,
        "dataset_fingerprint": fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_model(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
