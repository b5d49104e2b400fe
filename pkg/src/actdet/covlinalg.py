"""Shared numeric core: covariance assembly, inversion, quadratic forms.

Every detector works with the model covariance

    Sigma = S diag(w) S^H + sigma^2 I,      w = alpha*g or gamma,

its inverse, and the per-device quadratic forms

    q_n = s_n^H Sigma^-1 s_n,
    r_n = s_n^H Sigma^-1 SigmaHat Sigma^-1 s_n,

both mathematically real for Hermitian inputs.  The inverse is computed
with Frobenius inversion: two real symmetric positive definite inversions
(Cholesky) instead of one complex one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from actdet.sysmodel import DomainError

# Imaginary residue above this (relative) on q/r indicates broken Hermitian
# symmetry upstream.
_IMAG_TOL = 1e-8


class ConditioningError(np.linalg.LinAlgError):
    """Numerically singular matrix; carries an estimated condition number."""

    def __init__(self, message: str, cond_estimate: float):
        super().__init__(f"{message} (estimated condition number {cond_estimate:.3e})")
        self.cond_estimate = cond_estimate


class SingularUpdateError(np.linalg.LinAlgError):
    """Rank-1 inverse update denominator fell below tolerance."""


def cov_unknown(pilots: np.ndarray, gamma: np.ndarray, noise_power: float,
                pilots_conj: np.ndarray | None = None) -> np.ndarray:
    """S diag(gamma) S^H + sigma^2 I; Hermitian PD for sigma^2 > 0.

    Iterative callers can pass a precomputed pilots.conj() to avoid one
    L x N allocation per call.
    """
    if noise_power <= 0:
        raise DomainError("noise power must be strictly positive")
    if pilots_conj is None:
        pilots_conj = pilots.conj()
    l = pilots.shape[0]
    sigma = (pilots * gamma) @ pilots_conj.T
    sigma[np.diag_indices(l)] += noise_power
    return sigma


def cov_known(pilots: np.ndarray, alpha: np.ndarray, gains: np.ndarray,
              noise_power: float) -> np.ndarray:
    """S diag(alpha) diag(g) S^H + sigma^2 I.

    Delegates to cov_unknown with gamma = alpha*g so both paths produce
    bit-identical matrices for matching inputs.
    """
    return cov_unknown(pilots, alpha * gains, noise_power)


def _chol_cond_estimate(diag: np.ndarray) -> float:
    """Condition estimate from a Cholesky diagonal: (max/min)^2."""
    dmin = float(np.min(diag))
    if dmin <= 0:
        return np.inf
    return float((np.max(diag) / dmin) ** 2)


def _spd_solve(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Solve a @ x = b for symmetric PD a via Cholesky; returns (x, cond estimate)."""
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        # Cheap fallback estimate for the error message only.
        eigs = np.linalg.eigvalsh((a + a.T) / 2.0)
        cond = np.inf if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
        raise ConditioningError(f"{what} is numerically singular", cond) from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False), \
        _chol_cond_estimate(np.diag(factor[0]))


def frobenius_inverse(sigma: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian PD matrix via two real SPD inversions.

    With Sigma = A + iB (A symmetric PD, B skew-symmetric):

        Re(Sigma^-1) = (A + B A^-1 B)^-1
        Im(Sigma^-1) = -A^-1 B (A + B A^-1 B)^-1

    Raises ConditioningError when either real factor fails Cholesky.
    """
    a = np.ascontiguousarray(sigma.real)
    b = np.ascontiguousarray(sigma.imag)
    l = a.shape[0]
    eye = np.eye(l)
    if not np.any(b):
        inv, _ = _spd_solve(a, eye, "Re(Sigma)")
        inv = (inv + inv.T) / 2.0
        return inv.astype(complex)
    x, _ = _spd_solve(a, b, "Re(Sigma)")          # A^-1 B
    c = a + b @ x                                 # A + B A^-1 B, symmetric PD
    re_inv, _ = _spd_solve(c, eye, "A + B A^-1 B")
    re_inv = (re_inv + re_inv.T) / 2.0
    im_inv = -x @ re_inv
    im_inv = (im_inv - im_inv.T) / 2.0
    return re_inv + 1j * im_inv


def woodbury_rank1(sigma_inv: np.ndarray, s: np.ndarray, delta: float) -> np.ndarray:
    """Inverse of (Sigma + delta * s s^H) from Sigma^-1 (Sherman-Morrison).

    Returns a new matrix; the input is not modified.  delta = 0 returns the
    input unchanged.
    """
    if delta == 0.0:
        return sigma_inv
    u = sigma_inv @ s
    denom = 1.0 + delta * float(np.real(s.conj() @ u))
    if denom <= 1e-14:
        raise SingularUpdateError(
            f"rank-1 update denominator {denom:.3e} below tolerance")
    return sigma_inv - (delta / denom) * np.outer(u, u.conj())


def quad_forms(pilots: np.ndarray, sigma_inv: np.ndarray, emp_cov: np.ndarray,
               pilots_conj: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batched q_n = s_n^H Sigma^-1 s_n and r_n = s_n^H Sigma^-1 SigmaHat Sigma^-1 s_n.

    Two L x L by L x N products plus column reductions; the imaginary parts
    are discarded after a symmetry sanity check.  Iterative callers can pass
    a precomputed pilots.conj() to keep the hot loop allocation-light.
    """
    if pilots_conj is None:
        pilots_conj = pilots.conj()
    t = sigma_inv @ pilots                       # Sigma^-1 s_n, columns
    # both reductions share one contraction path so q - r cancels exactly
    # when the empirical covariance equals the model covariance
    qc = np.einsum("ln,ln->n", pilots_conj, t)
    rc = np.einsum("ln,ln->n", t.conj(), emp_cov @ t)
    if __debug__:
        scale = max(1.0, float(np.max(np.abs(qc.real))))
        assert float(np.max(np.abs(qc.imag))) <= _IMAG_TOL * scale, \
            "q has non-negligible imaginary residue; Sigma^-1 not Hermitian?"
        rscale = max(1.0, float(np.max(np.abs(rc.real))))
        assert float(np.max(np.abs(rc.imag))) <= _IMAG_TOL * rscale, \
            "r has non-negligible imaginary residue; inputs not Hermitian?"
    return qc.real.copy(), rc.real.copy()


def eval_objective(sigma: np.ndarray, sigma_inv: np.ndarray,
                   emp_cov: np.ndarray) -> float:
    """log|Sigma| + tr(Sigma^-1 SigmaHat) for Hermitian PD Sigma.

    The log-determinant comes from a complex Cholesky factorization;
    failure means Sigma left the PD cone.
    """
    try:
        factor = scipy.linalg.cho_factor(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DomainError("objective requires a positive definite covariance") from exc
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(factor[0])))))
    trace = float(np.real(np.sum(sigma_inv * emp_cov.T)))
    return logdet + trace


@dataclass
class CovState:
    """Covariance, its inverse and the quadratic forms at one iterate."""

    sigma: np.ndarray      # complex Hermitian (L, L)
    sigma_inv: np.ndarray  # complex Hermitian (L, L)
    q: np.ndarray          # float (N,), q_n > 0
    r: np.ndarray          # float (N,), r_n >= 0

    @classmethod
    def build(cls, pilots: np.ndarray, weights: np.ndarray, noise_power: float,
              emp_cov: np.ndarray,
              pilots_conj: np.ndarray | None = None) -> "CovState":
        """Assemble Sigma from diag weights, invert, and form q, r."""
        sigma = cov_unknown(pilots, weights, noise_power, pilots_conj)
        sigma_inv = frobenius_inverse(sigma)
        q, r = quad_forms(pilots, sigma_inv, emp_cov, pilots_conj)
        return cls(sigma=sigma, sigma_inv=sigma_inv, q=q, r=r)
