"""Prior-distribution machinery for the MAP detectors.

Known-pathloss MAP works on the activity vector and uses either an
independent Bernoulli prior or a pairwise (order-2) multivariate Bernoulli
(MVB) prior.  Unknown-pathloss MAP works on the effective pathloss
gamma_n = alpha_n * g_n, whose exact law is a point mass at 0 plus a
continuous density on [g_low, g_high] induced by uniform device placement
in an annulus and a monotone pathloss law.  That mixed law is replaced by
a once-differentiable surrogate: the atom becomes a cubic bump on
[0, eps), the density onset is bridged by a cubic Hermite piece on
[g_low - eps, g_low), and the gap in between is identically zero.

All penalty terms enter the objectives as -(1/M) log prior, so every
gradient here carries the 1/M factor.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.special

from actdet.sysmodel import DomainError, SystemConfig

# Density floor standing in for the exactly-zero gap of the smoothed law;
# log(floor) is finite so the penalty stays usable there.
DENSITY_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# Activity priors (known pathloss)
# ---------------------------------------------------------------------------

@dataclass
class IndependentPrior:
    """Independent Bernoulli activities with per-device probability p_n."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.p <= 0.0) or np.any(self.p >= 1.0):
            raise DomainError("activation probabilities must lie strictly in (0,1)")

    @property
    def log_odds(self) -> np.ndarray:
        return np.log(self.p / (1.0 - self.p))


@dataclass
class PairwiseMvbPrior:
    """Order-2 MVB prior: exp(sum c1_n a_n + sum_{n1<n2} c2_{n1n2} a_n1 a_n2)/Z.

    c2 is stored as a symmetric sparse matrix with zero diagonal; the
    constructor symmetrizes whatever triangle it is given.  The partition
    function is never evaluated: it cancels in gradients and only shifts
    objective values by a constant.
    """

    c1: np.ndarray
    c2: scipy.sparse.csr_matrix

    def __post_init__(self):
        self.c1 = np.asarray(self.c1, dtype=float)
        c2 = scipy.sparse.csr_matrix(self.c2)
        c2.setdiag(0.0)
        c2.eliminate_zeros()
        upper = scipy.sparse.triu(c2, k=1)
        if (c2 != c2.T).nnz:
            c2 = upper + upper.T          # given one triangle, mirror it
        self.c2 = scipy.sparse.csr_matrix(c2)

    def scaled(self, s: float) -> "PairwiseMvbPrior":
        return PairwiseMvbPrior(self.c1 * s, self.c2 * s)

    @classmethod
    def from_independent(cls, prior: IndependentPrior) -> "PairwiseMvbPrior":
        n = prior.p.shape[0]
        return cls(prior.log_odds, scipy.sparse.csr_matrix((n, n)))

    @classmethod
    def from_group_model(cls, n_devices: int, group_size: int, p_group: float,
                         coeff_cap: float = 12.0) -> "PairwiseMvbPrior":
        """Order-2 coefficients for the contiguous-group activity model.

        Fits one (first-order, pairwise) coefficient pair per group by
        maximizing the expected log-likelihood of the pairwise model under
        the true group law, which matches first and second moments as
        closely as the capped exponential family allows.  The exact group
        law sits on the family boundary (perfect within-group correlation),
        hence the cap.
        """
        if n_devices % group_size:
            raise DomainError("group_size must divide n_devices")
        a, b = _fit_group_coefficients(group_size, p_group, coeff_cap)
        c1 = np.full(n_devices, a)
        if group_size == 1:
            return cls(c1, scipy.sparse.csr_matrix((n_devices, n_devices)))
        blocks = []
        ones = np.ones((group_size, group_size)) - np.eye(group_size)
        for _ in range(n_devices // group_size):
            blocks.append(b * ones)
        c2 = scipy.sparse.block_diag(blocks, format="csr")
        return cls(c1, c2)


def _fit_group_coefficients(group_size: int, p: float, cap: float) -> tuple[float, float]:
    """Maximize E_true[log p_model] for the exchangeable pairwise family.

    Within one group the model p.m.f. depends only on the active count k:
    P(k) proportional to C(G,k) exp(a k + b k(k-1)/2).  The true group law
    has E[a_n] = p and E[a_n a_n'] = p, so the objective is
    G p a + C(G,2) p b - log Z(a, b), concave in (a, b).
    """
    g = group_size
    if g == 1:
        lo = math.log(p / (1.0 - p))
        return float(np.clip(lo, -cap, cap)), 0.0
    k = np.arange(g + 1)
    log_binom = np.array([math.lgamma(g + 1) - math.lgamma(i + 1) - math.lgamma(g - i + 1)
                          for i in k])
    pairs = k * (k - 1) / 2.0
    n_pairs = g * (g - 1) / 2.0

    def neg_ll_and_grad(theta):
        a, b = theta
        logits = log_binom + a * k + b * pairs
        logz = scipy.special.logsumexp(logits)
        w = np.exp(logits - logz)
        val = -(g * p * a + n_pairs * p * b - logz)
        grad = -np.array([g * p - float(w @ k), n_pairs * p - float(w @ pairs)])
        return val, grad

    res = scipy.optimize.minimize(
        neg_ll_and_grad, x0=np.array([math.log(p / (1 - p)), 0.0]), jac=True,
        method="L-BFGS-B", bounds=[(-cap, cap), (-2 * cap - 8, 2 * cap + 8)])
    return float(res.x[0]), float(res.x[1])


def log_prior_value_known(alpha: np.ndarray, prior, n_antennas: int) -> float:
    """Penalty term -(1/M) log p(alpha), up to the constant normalizer."""
    alpha = np.asarray(alpha, dtype=float)
    if isinstance(prior, IndependentPrior):
        return -float(prior.log_odds @ alpha) / n_antennas
    interaction = 0.5 * float(alpha @ (prior.c2 @ alpha))
    return -(float(prior.c1 @ alpha) + interaction) / n_antennas


def log_prior_grad_known(alpha: np.ndarray, prior, n_antennas: int) -> np.ndarray:
    """Gradient of the known-pathloss penalty: -(1/M) d log p / d alpha_n."""
    alpha = np.asarray(alpha, dtype=float)
    if isinstance(prior, IndependentPrior):
        return np.broadcast_to(-prior.log_odds / n_antennas, alpha.shape).copy()
    return -(prior.c1 + prior.c2 @ alpha) / n_antennas


# ---------------------------------------------------------------------------
# Distance / pathloss / effective-pathloss densities (unknown pathloss)
# ---------------------------------------------------------------------------

def pdf_distance(d, d_inner: float, d_outer: float):
    """Density 2d/(d_outer^2 - d_inner^2) of uniform placement in an annulus."""
    d = np.asarray(d, dtype=float)
    val = 2.0 * d / (d_outer ** 2 - d_inner ** 2)
    return np.where((d >= d_inner) & (d <= d_outer), val, 0.0)


@dataclass
class EffPathlossPrior:
    """Smoothed effective-pathloss prior for the unknown-pathloss MAP.

    The pathloss law is phi(d) = P_lin * (4 pi d / lambda)**-eta with the
    transmit power folded in, giving support [g_low, g_high] =
    [phi(d_outer), phi(d_inner)] for the continuous part.  eps is the
    smoothing width; the zero piece [eps, g_low - eps) exists only when
    2*eps <= g_low, which is what the constructor enforces.

    dead_zone_grad bounds the magnitude of the penalty gradient: it is the
    value returned (with a sign) on the zero piece, where the log-density
    is -inf, and the clip level for |p'/p| elsewhere, which diverges where
    the cubic pieces touch zero.  It defaults to 2/g_low, the log-slope
    scale of the continuous density, so the prior shapes the iteration
    without overpowering the likelihood whose curvature it cannot see.
    """

    p: np.ndarray
    eps: float
    d_inner: float
    d_outer: float
    pathloss_exp: float
    wavelength: float
    tx_power_dbm: float
    dead_zone_grad: float | None = None
    g_low: float = field(init=False)
    g_high: float = field(init=False)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.p <= 0.0) or np.any(self.p >= 1.0):
            raise DomainError("activation probabilities must lie strictly in (0,1)")
        if not self.d_inner < self.d_outer or self.d_inner <= 0:
            raise DomainError("need 0 < d_inner < d_outer")
        self.g_low = float(self.phi(self.d_outer))
        self.g_high = float(self.phi(self.d_inner))
        if not 0.0 < 2.0 * self.eps <= self.g_low:
            raise DomainError("need 0 < 2*eps <= g_low so the smoothed pieces don't overlap")
        if self.dead_zone_grad is None:
            self.dead_zone_grad = 2.0 / self.g_low

    @classmethod
    def from_config(cls, cfg: SystemConfig, eps_frac: float = 0.1) -> "EffPathlossPrior":
        p = np.full(cfg.n_devices, cfg.activity.marginal_p())
        # eps is set relative to g_low, which depends only on the law.
        p_lin = 10.0 ** (cfg.tx_power_dbm / 10.0)
        k = 4.0 * np.pi / cfg.wavelength
        g_low = p_lin * (k * cfg.d_outer) ** (-cfg.pathloss_exp)
        return cls(p=p, eps=eps_frac * g_low, d_inner=cfg.d_inner,
                   d_outer=cfg.d_outer, pathloss_exp=cfg.pathloss_exp,
                   wavelength=cfg.wavelength, tx_power_dbm=cfg.tx_power_dbm)

    def whitened(self, noise_power: float) -> "EffPathlossPrior":
        """Prior on the unit-noise scale: gains divided by noise_power.

        Folding the factor into the transmit power shifts [g_low, g_high]
        and eps consistently; dead_zone_grad re-defaults to the new scale.
        """
        return dataclasses.replace(
            self, eps=self.eps / noise_power, dead_zone_grad=None,
            tx_power_dbm=self.tx_power_dbm - 10.0 * math.log10(noise_power))

    # -- pathloss law phi and the inverse map used by the change of variables

    @property
    def _p_lin(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0)

    @property
    def _k(self) -> float:
        return 4.0 * np.pi / self.wavelength

    def phi(self, d):
        return self._p_lin * (self._k * np.asarray(d, dtype=float)) ** (-self.pathloss_exp)

    def phi_inv(self, g):
        g = np.asarray(g, dtype=float)
        return (1.0 / self._k) * (g / self._p_lin) ** (-1.0 / self.pathloss_exp)

    def dphi_inv(self, g):
        g = np.asarray(g, dtype=float)
        eta = self.pathloss_exp
        return -(1.0 / (self._k * eta * self._p_lin)) * \
            (g / self._p_lin) ** (-1.0 / eta - 1.0)

    def d2phi_inv(self, g):
        g = np.asarray(g, dtype=float)
        eta = self.pathloss_exp
        return ((1.0 + eta) / (self._k * eta ** 2 * self._p_lin ** 2)) * \
            (g / self._p_lin) ** (-1.0 / eta - 2.0)

    @property
    def _annulus_area2(self) -> float:
        return self.d_outer ** 2 - self.d_inner ** 2

    def _pg(self, g):
        """Continuous pathloss density -2 phi_inv(g) phi_inv'(g) / (d_u^2-d_l^2)."""
        return -2.0 * self.phi_inv(g) * self.dphi_inv(g) / self._annulus_area2

    def _dpg(self, g):
        return -2.0 * (self.dphi_inv(g) ** 2 + self.phi_inv(g) * self.d2phi_inv(g)) \
            / self._annulus_area2

    def _hermite_coeffs(self):
        """Value and slope targets of the onset bridge at g_low."""
        cv = self._pg(self.g_low)   # density value at g_low (per unit p)
        cw = self._dpg(self.g_low)  # density slope at g_low (per unit p)
        return cv, cw


def pdf_pathloss(g, prior: EffPathlossPrior):
    """Density of the pathloss random variable on [g_low, g_high], else 0."""
    g = np.asarray(g, dtype=float)
    inside = (g >= prior.g_low) & (g <= prior.g_high)
    val = np.where(inside, prior._pg(np.where(inside, g, prior.g_low)), 0.0)
    return val


def pdf_eff_exact(gamma: float, prior: EffPathlossPrior, n: int) -> tuple[float, float]:
    """Exact mixed law of gamma_n: (atom mass at 0, continuous density).

    Returns the atom mass only at gamma == 0; elsewhere the density, which
    is zero on the open gap (0, g_low).
    """
    p = float(prior.p[n])
    if gamma == 0.0:
        return 1.0 - p, 0.0
    if prior.g_low <= gamma <= prior.g_high:
        return 0.0, p * float(prior._pg(gamma))
    return 0.0, 0.0


def _check_range(gamma, prior: EffPathlossPrior):
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0.0) or np.any(gamma > prior.g_high * (1.0 + 1e-12)):
        raise DomainError("gamma outside [0, g_high]")
    return gamma


def _smooth_pieces(gamma, prior: EffPathlossPrior):
    """Membership masks of the four pieces of the smoothed density."""
    eps, gl = prior.eps, prior.g_low
    bump = gamma < eps
    bridge = (gamma >= gl - eps) & (gamma < gl)
    tail = gamma >= gl
    return bump, bridge, tail


def pdf_eff_smooth(gamma, prior: EffPathlossPrior, n: int | None = None):
    """Once-differentiable surrogate density of gamma on [0, g_high].

    Piecewise: a cubic bump carrying the deactivation mass on [0, eps), an
    exact zero gap, a cubic Hermite bridge on [g_low - eps, g_low) matching
    the continuous density's value and slope at g_low, and the exact
    density p_n * p_G on [g_low, g_high].
    """
    gamma = _check_range(gamma, prior)
    p = np.asarray(prior.p if n is None else prior.p[n], dtype=float)
    eps, gl = prior.eps, prior.g_low
    bump, bridge, tail = _smooth_pieces(gamma, prior)
    cv, cw = prior._hermite_coeffs()

    out = np.zeros_like(gamma)
    gb = np.where(bump, gamma, 0.0)
    out = np.where(bump, (1.0 - p) * (1.0 + 2.0 * gb / eps) * ((gb - eps) / eps) ** 2, out)
    t = np.where(bridge, gamma - gl, 0.0)
    u = (t + eps) / eps
    out = np.where(bridge,
                   p * (cv * (1.0 - 2.0 * t / eps) * u ** 2 + cw * t * u ** 2),
                   out)
    gt = np.where(tail, gamma, gl)
    out = np.where(tail, p * prior._pg(gt), out)
    return out if out.shape else float(out)


def dpdf_eff_smooth(gamma, prior: EffPathlossPrior, n: int | None = None):
    """Derivative of pdf_eff_smooth, piecewise on the same partition."""
    gamma = _check_range(gamma, prior)
    p = np.asarray(prior.p if n is None else prior.p[n], dtype=float)
    eps, gl = prior.eps, prior.g_low
    bump, bridge, tail = _smooth_pieces(gamma, prior)
    cv, cw = prior._hermite_coeffs()

    out = np.zeros_like(gamma)
    gb = np.where(bump, gamma, 0.0)
    out = np.where(bump, 6.0 * (1.0 - p) * gb * (gb - eps) / eps ** 3, out)
    t = np.where(bridge, gamma - gl, 0.0)
    out = np.where(bridge,
                   p * (-6.0 * cv * t * (t + eps) / eps ** 3
                        + cw * (t + eps) * (3.0 * t + eps) / eps ** 2),
                   out)
    gt = np.where(tail, gamma, gl)
    out = np.where(tail, p * prior._dpg(gt), out)
    return out if out.shape else float(out)


def log_prior_value_unknown(gamma: np.ndarray, prior: EffPathlossPrior,
                            n_antennas: int) -> float:
    """Penalty -(1/M) sum_n log p^eps(gamma_n), with the density floored."""
    dens = np.maximum(np.asarray(pdf_eff_smooth(gamma, prior)), DENSITY_FLOOR)
    return -float(np.sum(np.log(dens))) / n_antennas


def log_prior_grad_unknown(gamma: np.ndarray, prior: EffPathlossPrior,
                           n_antennas: int) -> np.ndarray:
    """Elementwise -(1/M) p'/p of the smoothed prior, kept finite.

    Where the density is identically zero (the gap, including its
    endpoints) the true penalty gradient is undefined; a finite push of
    magnitude prior.dead_zone_grad/M is returned instead, directed toward
    the nearest allowed region: positive (toward 0) below g_low/2,
    negative (toward g_low) above.  Elsewhere p'/p is clipped to the same
    magnitude: it diverges like 2/distance at the points where the cubic
    pieces touch zero, and an unbounded penalty gradient there would wall
    off the support from below.  The clip only modifies thin layers (about
    eps/3 wide) around those two points.
    """
    gamma = np.asarray(gamma, dtype=float)
    dens = np.asarray(pdf_eff_smooth(gamma, prior))
    deriv = np.asarray(dpdf_eff_smooth(gamma, prior))
    dead = dens <= DENSITY_FLOOR
    safe = np.where(dead, 1.0, dens)
    mag = prior.dead_zone_grad
    grad = -np.clip(deriv / safe, -mag, mag) / n_antennas
    push = np.where(gamma <= prior.g_low / 2.0, 1.0, -1.0) * (mag / n_antennas)
    return np.where(dead, push, grad)
