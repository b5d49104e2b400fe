"""PSCA engine: gradients, coordinate solutions, schedules, convergence."""

import json

import numpy as np
import pytest

from actdet import covlinalg
from actdet.estimators import (Problem, StepSchedule, bounds_for,
                               build_state, coord_solution, default_schedule,
                               default_steps, gradient, objective_value, psca_run,
                               stationarity_residual, surrogate_coef)
from actdet.priors import EffPathlossPrior, IndependentPrior
from actdet.sysmodel import DomainError, Sample, gen_dataset, make_rng
from tests.conftest import unit_noise_config


def unit_sample(seed=0, **kwargs):
    cfg = unit_noise_config(**kwargs)
    return cfg, gen_dataset(cfg, 1, seed)[0]


def problems_for(cfg):
    n = cfg.n_devices
    ind = IndependentPrior(np.full(n, cfg.activity.marginal_p()))
    eff = EffPathlossPrior.from_config(cfg)
    return {
        "ml-k": Problem.ml_k(),
        "map-k": Problem.map_k(ind),
        "ml-ud": Problem.ml_ud(),
        "map-ur": Problem.map_ur(eff),
    }


def interior_point(problem, sample, rng):
    """Interior iterate where every objective term is smooth."""
    n = sample.n_devices
    if problem.known_pathloss:
        return rng.uniform(0.2, 0.8, n)
    if problem.kind == "ml-ud":
        return rng.uniform(0.05, 1.2, n) * np.mean(sample.gains)
    prior = problem.prior
    return rng.uniform(1.05 * prior.g_low, 0.95 * prior.g_high, n)


class TestProblem:
    def test_map_requires_prior(self):
        with pytest.raises(DomainError):
            Problem("map-k")

    def test_ml_takes_no_prior(self):
        with pytest.raises(DomainError):
            Problem("ml-k", IndependentPrior(np.array([0.1])))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            Problem("mle")


class TestSchedule:
    def test_first_three_steps(self):
        assert default_schedule(0) == 0.5
        assert default_schedule(1) == 0.375
        assert default_schedule(2) == pytest.approx(0.3046875, abs=1e-12)

    def test_diminishing_conditions(self):
        steps = default_steps(100000)
        assert np.all(steps > 0.0) and np.all(steps <= 1.0)
        assert np.all(np.diff(steps) < 0.0)
        # partial sums keep growing logarithmically (divergence) while the
        # squared sum has already saturated (convergence)
        assert steps.sum() > 15.0
        assert steps[10000:].sum() > 3.0
        assert np.sum(steps ** 2) < 2.0

    def test_polynomial_schedule_admissible(self):
        sched = StepSchedule.polynomial()
        steps = np.array([sched(k) for k in range(100000)])
        assert np.all(steps > 0.0) and np.all(steps <= 1.0)
        assert steps.sum() > 100.0
        assert np.sum(steps ** 2) < 25.0
        with pytest.raises(DomainError):
            StepSchedule.polynomial(exponent=0.5)

    def test_explicit_vector(self):
        sched = StepSchedule.explicit([0.5, 0.25])
        assert sched(0) == 0.5 and sched(1) == 0.25
        with pytest.raises(DomainError):
            StepSchedule.explicit([0.5, 1.5])

    def test_bad_fn_step_rejected(self):
        sched = StepSchedule(fn=lambda k: 2.0)
        with pytest.raises(DomainError):
            sched(0)


class TestGradient:
    def test_cold_start_against_hand_value(self):
        cfg, sample = unit_sample(1, n_devices=15, pilot_len=6)
        sample.emp_cov[:] = 0.0
        state = build_state(Problem.ml_k(), np.zeros(15), sample)
        grad = gradient(Problem.ml_k(), np.zeros(15), state, sample.gains, 32)
        np.testing.assert_allclose(grad, sample.gains * 6.0, rtol=1e-10)

    def test_stationary_at_generating_covariance(self, rng):
        cfg, sample = unit_sample(2, n_devices=15, pilot_len=6)
        x = rng.uniform(0.1, 0.9, 15)
        sample.emp_cov = covlinalg.cov_unknown(sample.pilots,
                                               x * sample.gains, 1.0)
        state = build_state(Problem.ml_k(), x, sample)
        grad = gradient(Problem.ml_k(), x, state, sample.gains, 32)
        np.testing.assert_allclose(grad, 0.0, atol=1e-9)

    @pytest.mark.parametrize("kind", ["ml-k", "map-k", "ml-ud", "map-ur"])
    def test_finite_difference_oracle(self, kind, rng):
        cfg, sample = unit_sample(3, n_devices=20, pilot_len=8, n_antennas=32)
        problem = problems_for(cfg)[kind]
        for trial in range(5):
            x = interior_point(problem, sample, rng)
            state = build_state(problem, x, sample)
            grad = gradient(problem, x, state, sample.gains, sample.n_antennas)
            h = 1e-5
            fd = np.empty_like(x)
            for i in range(x.size):
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                fp = objective_value(problem, xp, sample, build_state(problem, xp, sample))
                fm = objective_value(problem, xm, sample, build_state(problem, xm, sample))
                fd[i] = (fp - fm) / (2 * h)
            rel = np.linalg.norm(fd - grad) / np.linalg.norm(grad)
            assert rel <= 1e-6


class TestSurrogateCoef:
    def test_noise_floor_value(self):
        cfg, sample = unit_sample(4, n_devices=15, pilot_len=6)
        state = build_state(Problem.ml_k(), np.zeros(15), sample)
        coef = surrogate_coef(Problem.ml_k(), state, sample.gains)
        np.testing.assert_allclose(coef, (sample.gains * 6.0) ** 2, rtol=1e-10)

    def test_gain_homogeneity(self):
        cfg, sample = unit_sample(5, n_devices=15, pilot_len=6)
        state = build_state(Problem.ml_k(), np.zeros(15), sample)
        c1 = surrogate_coef(Problem.ml_k(), state, sample.gains)
        c2 = surrogate_coef(Problem.ml_k(), state, 3.0 * sample.gains)
        np.testing.assert_allclose(c2, 9.0 * c1, rtol=1e-12)

    def test_unknown_case_drops_gains(self):
        cfg, sample = unit_sample(6, n_devices=15, pilot_len=6)
        state = build_state(Problem.ml_ud(), np.zeros(15), sample)
        np.testing.assert_allclose(surrogate_coef(Problem.ml_ud(), state, None),
                                   state.q ** 2, rtol=1e-14)

    def test_tracks_hessian_diagonal_at_large_m(self, rng):
        # the squared quadratic form approaches the Hessian diagonal only
        # where the empirical covariance matches the model, i.e. at the
        # activity vector that generated the scene
        cfg, sample = unit_sample(7, n_devices=10, pilot_len=6, n_antennas=2048,
                                  p=0.3)
        problem = Problem.ml_k()
        x = sample.activities.astype(float)
        state = build_state(problem, x, sample)
        coef = surrogate_coef(problem, state, sample.gains)
        h = 1e-4
        for i in range(10):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            f0 = objective_value(problem, x, sample, state)
            fp = objective_value(problem, xp, sample, build_state(problem, xp, sample))
            fm = objective_value(problem, xm, sample, build_state(problem, xm, sample))
            hess = (fp - 2 * f0 + fm) / h ** 2
            assert 0.5 <= coef[i] / hess <= 2.0


class TestCoordSolution:
    def test_zero_gradient_fixed_point(self, rng):
        x = rng.uniform(0, 1, 10)
        out = coord_solution(x, np.zeros(10), np.ones(10), 0.0, 1.0)
        np.testing.assert_array_equal(out, x)

    def test_huge_gradient_clamps_low(self, rng):
        x = rng.uniform(0, 1, 10)
        out = coord_solution(x, np.full(10, 1e9), np.ones(10), 0.0, 1.0)
        np.testing.assert_array_equal(out, np.zeros(10))

    @pytest.mark.parametrize("bounds", [(0.0, 1.0), (0.0, np.inf), (0.0, 0.7)])
    def test_grid_search_oracle(self, bounds, rng):
        lo, hi = bounds
        for _ in range(25):
            x = rng.uniform(lo, min(hi, 2.0))
            grad = rng.normal(0, 2)
            coef = rng.uniform(0.1, 5)
            out = float(coord_solution(np.array([x]), np.array([grad]),
                                       np.array([coef]), lo, hi)[0])
            top = hi if np.isfinite(hi) else max(2.0, 2 * abs(x - grad / coef))
            grid = np.linspace(lo, top, 100001)
            surr = grad * (grid - x) + 0.5 * coef * (grid - x) ** 2
            best = grid[np.argmin(surr)]
            step = grid[1] - grid[0]
            assert abs(out - best) <= 1.5 * step
            out_val = grad * (out - x) + 0.5 * coef * (out - x) ** 2
            assert out_val <= surr.min() + 1e-12


class TestPscaRun:
    def test_zero_iterations(self):
        cfg, sample = unit_sample(8, n_devices=15, pilot_len=6)
        trace = psca_run(Problem.ml_k(), sample, max_iter=0)
        np.testing.assert_array_equal(trace.final, np.zeros(15))

    def test_trace_lengths_and_update_norms(self):
        cfg, sample = unit_sample(9, n_devices=15, pilot_len=6)
        trace = psca_run(Problem.ml_k(), sample, max_iter=12, tol=0.0)
        k = trace.n_iterations
        assert k == 12
        assert len(trace.iterates) == k + 1
        assert len(trace.objective) == k
        assert len(trace.wall_times) == k
        for i in range(k):
            manual = np.linalg.norm(trace.iterates[i + 1] - trace.iterates[i])
            assert trace.update_norm[i] == pytest.approx(manual, rel=1e-12)

    def test_objective_decreases_overall(self):
        cfg, sample = unit_sample(10, n_devices=30, pilot_len=8)
        trace = psca_run(Problem.ml_k(), sample, max_iter=30, tol=0.0)
        assert trace.objective[-1] < trace.objective[0]

    def test_stop_on_tolerance(self):
        cfg, sample = unit_sample(11, n_devices=15, pilot_len=6)
        trace = psca_run(Problem.ml_k(), sample, max_iter=500, tol=1e-4)
        assert trace.n_iterations < 500
        assert trace.update_norm[-1] < 1e-4

    @pytest.mark.parametrize("kind", ["ml-k", "map-k", "ml-ud", "map-ur"])
    def test_box_feasibility(self, kind):
        cfg, sample = unit_sample(12, n_devices=25, pilot_len=8)
        problem = problems_for(cfg)[kind]
        lo, hi = bounds_for(problem, sample)
        trace = psca_run(problem, sample, max_iter=25, tol=0.0)
        for it in trace.iterates:
            assert np.all(it >= lo) and np.all(it <= (hi if np.isfinite(hi) else np.inf))

    def test_noiseless_orthogonal_toy(self):
        l = 8
        pilots = np.sqrt(l) * np.eye(l, dtype=complex)
        gamma = np.zeros(l)
        gamma[3] = 1.0
        rng = make_rng(13)
        h = (rng.standard_normal((l, 512)) + 1j * rng.standard_normal((l, 512))) \
            / np.sqrt(2)
        y = (pilots * np.sqrt(gamma)) @ h
        sample = Sample(pilots=pilots, gains=np.ones(l), activities=gamma.copy(),
                        eff_pathloss=gamma.copy(), received=y,
                        emp_cov=y @ y.conj().T / 512, noise_power=1e-3)
        trace = psca_run(Problem.ml_k(), sample, max_iter=30, tol=0.0)
        assert np.max(np.abs(trace.final - gamma)) <= 0.05

    def test_map_k_even_odds_is_iterate_identical_to_ml(self):
        cfg, sample = unit_sample(14, n_devices=20, pilot_len=8)
        prior = IndependentPrior(np.full(20, 0.5))
        tr_ml = psca_run(Problem.ml_k(), sample, max_iter=15, tol=0.0)
        tr_map = psca_run(Problem.map_k(prior), sample, max_iter=15, tol=0.0)
        for a, b in zip(tr_ml.iterates, tr_map.iterates):
            np.testing.assert_array_equal(a, b)

    def test_abort_on_inversion_failure(self, monkeypatch):
        cfg, sample = unit_sample(15, n_devices=15, pilot_len=6)

        def boom(sigma):
            raise covlinalg.ConditioningError("forced", 1e99)

        monkeypatch.setattr("actdet.estimators.covlinalg.CovState.build",
                            lambda *a, **k: (_ for _ in ()).throw(
                                covlinalg.ConditioningError("forced", 1e99)))
        trace = psca_run(Problem.ml_k(), sample, max_iter=5)
        assert "abort" in trace.meta
        np.testing.assert_array_equal(trace.final, np.zeros(15))

    def test_trace_jsonl_dump(self, tmp_path):
        cfg, sample = unit_sample(16, n_devices=15, pilot_len=6)
        trace = psca_run(Problem.ml_k(), sample, max_iter=5, tol=0.0)
        path = tmp_path / "trace.jsonl"
        trace.dump_jsonl(path, method="psca-ml-k")
        records = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(records) == 5
        assert records[0]["method"] == "psca-ml-k"
        assert records[2]["iteration"] == 3
        assert records[1]["update_norm"] == pytest.approx(trace.update_norm[1])


class TestExactCoordinateOptimality:
    def test_candidate_equals_rank_one_logdet_minimizer(self, rng):
        """The ML candidate is the exact 1-D minimizer of the true objective."""
        cfg, sample = unit_sample(17, n_devices=20, pilot_len=8)
        problem = Problem.ml_k()
        x = rng.uniform(0.0, 1.0, 20)
        state = build_state(problem, x, sample)
        grad = gradient(problem, x, state, sample.gains, sample.n_antennas)
        coef = surrogate_coef(problem, state, sample.gains)
        candidate = coord_solution(x, grad, coef, 0.0, 1.0)
        for n in range(20):
            g, q, r = sample.gains[n], state.q[n], state.r[n]

            def h(delta):
                u = 1.0 + delta * g * q
                return np.log(u) - delta * g * r / u

            # closed-form exact minimizer of h over the box
            exact = float(np.clip(x[n] + (r / q - 1.0) / (g * q), 0.0, 1.0))
            assert abs(candidate[n] - exact) <= 1e-12
            # and a brute numeric check that it is indeed the minimum
            deltas = np.linspace(-x[n], 1.0 - x[n], 2001)
            assert h(exact - x[n]) <= np.min(h(deltas)) + 1e-10


class TestStationarity:
    @pytest.mark.parametrize("kind", ["ml-k", "map-k", "ml-ud", "map-ur"])
    def test_residual_small_after_long_run(self, kind):
        # the slowly-decaying polynomial schedule accumulates enough step
        # mass for the iterates to actually reach a stationary point
        cfg = unit_noise_config(n_devices=100, pilot_len=16, n_antennas=64,
                                p=0.05, seed=0)
        sample = gen_dataset(cfg, 1, 100)[0]
        problem = problems_for(cfg)[kind]
        trace = psca_run(problem, sample, schedule=StepSchedule.polynomial(),
                         max_iter=200, tol=0.0, record_objective=False)
        assert stationarity_residual(problem, trace.final, sample) <= 1e-3


class TestPriorInfluenceShrinksWithAntennas:
    def test_map_estimate_approaches_ml_with_doubled_m(self):
        cfg = unit_noise_config(n_devices=12, pilot_len=5, n_antennas=64, p=0.2)
        prior = IndependentPrior(np.full(12, 0.2))
        gaps = {32: [], 64: []}
        for seed in range(100):
            wide = gen_dataset(cfg, 1, [21, seed])[0]
            for m in (32, 64):
                sub = Sample(pilots=wide.pilots, gains=wide.gains,
                             activities=wide.activities,
                             eff_pathloss=wide.eff_pathloss,
                             received=wide.received[:, :m],
                             emp_cov=wide.received[:, :m] @ wide.received[:, :m].conj().T / m,
                             noise_power=wide.noise_power)
                ml = psca_run(Problem.ml_k(), sub, max_iter=40, tol=0.0,
                              record_objective=False).final
                mp = psca_run(Problem.map_k(prior), sub, max_iter=40, tol=0.0,
                              record_objective=False).final
                gaps[m].append(np.linalg.norm(ml - mp))
        assert np.mean(gaps[64]) < np.mean(gaps[32])
