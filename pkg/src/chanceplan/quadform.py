"""Exact collision-probability bound via the series expansion of the CDF of
a Gaussian quadratic form.

The probability that a Gaussian vector lands inside an ellipsoid equals the
CDF at the threshold of v = p^T A p, evaluated here by the alternating power
series over eigenvalues of Sigma^1/2 A Sigma^1/2.  The series is exact but
numerically delicate when the eigenvalue spread is large (terms peak far
above the result before cancelling), so the evaluator pre-scales the problem,
runs in float64 with a rescaling guard, and escalates to multiprecision
arithmetic when the float64 round-off would exceed the requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.stats import chi2

from .ellipsoids import Ellipsoid, GaussianState
from .errors import NotPositiveDefiniteError, SeriesConvergenceError

_MAX_TERMS = 500
_RESCALE_AT = 1e100
# beyond this tail mass the far/engulfed fast paths answer directly
_GUARD_MASS = 1e-14


@dataclass(frozen=True)
class QuadFormProblem:
    """Quadratic form v = p^T a_matrix p with p ~ N(mean, cov), threshold q."""

    a_matrix: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        mu = np.asarray(self.mean, dtype=float).reshape(-1)
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mu.size
        if a.shape != (n, n) or c.shape != (n, n):
            raise NotPositiveDefiniteError("a_matrix/cov shape mismatch with mean")
        for name, m in (("a_matrix", a), ("cov", c)):
            if np.abs(m - m.T).max() > 1e-12 * max(1.0, np.abs(m).max()):
                raise NotPositiveDefiniteError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(m).min() <= 0.0:
                raise NotPositiveDefiniteError(f"{name} is not strictly PD")
        if not self.q > 0.0:
            raise ValueError("threshold q must be positive")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", c)


@dataclass(frozen=True)
class SeriesResult:
    """Converged series value with bookkeeping.

    truncation_bound is the magnitude of the last accumulated term; it is a
    heuristic proxy for the truncation error, not a certified bound.
    """

    value: float
    terms_used: int
    truncation_bound: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("value must lie in [0, 1]")
        if self.truncation_bound < 0.0:
            raise ValueError("truncation_bound must be nonnegative")


def _whiten(p: QuadFormProblem) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues lambda of Sigma^1/2 A Sigma^1/2 and offsets b."""
    evs, vecs = np.linalg.eigh(p.cov)
    s_half = (vecs * np.sqrt(evs)) @ vecs.T
    s_inv_half = (vecs / np.sqrt(evs)) @ vecs.T
    m = s_half @ p.a_matrix @ s_half
    lam, rot = np.linalg.eigh(0.5 * (m + m.T))
    b = rot.T @ (s_inv_half @ p.mean)
    return lam, b


def _tail_guards(p: QuadFormProblem, tol: float) -> float | None:
    """Fast answers for far-separated or fully-engulfing configurations.

    Returns 0.0 or 1.0 when a chi-squared tail bound certifies the result to
    well below the requested tolerance, else None.
    """
    n = p.mean.size
    a_eigs = np.linalg.eigvalsh(p.a_matrix)
    sig_max = float(np.linalg.eigvalsh(p.cov).max())
    dist = float(np.linalg.norm(p.mean))
    cut = min(tol, _GUARD_MASS) * 0.1
    r_max = math.sqrt(p.q / a_eigs.min())
    if dist > r_max:
        z2 = (dist - r_max) ** 2 / sig_max
        if chi2.sf(z2, n) < cut:
            return 0.0
    r_min = math.sqrt(p.q / a_eigs.max())
    if dist < r_min:
        z2 = (r_min - dist) ** 2 / sig_max
        if chi2.sf(z2, n) < cut:
            return 1.0
    return None


def _series_float(lam2, b, log_c0, q2, n, tol):
    """Float64 pass.  Returns (sum, terms, last, peak, converged)."""
    inv2lam = 1.0 / (2.0 * lam2)
    b2 = b * b
    lnq = math.log(q2)
    d = np.zeros(_MAX_TERMS + 1)
    cs = np.zeros(_MAX_TERMS + 1)
    cs[0] = 1.0
    pw = np.ones(n)
    scale_log = log_c0
    total = 0.0
    peak = 0.0
    last = math.inf
    decay = 0
    for k in range(_MAX_TERMS + 1):
        if k > 0:
            pw = pw * inv2lam
            d[k] = 0.5 * float(np.sum((1.0 - k * b2) * pw))
            cs[k] = float(np.dot(d[1 : k + 1], cs[k - 1 :: -1])) / k
            if abs(cs[k]) > _RESCALE_AT:
                cs[: k + 1] /= _RESCALE_AT
                scale_log += math.log(_RESCALE_AT)
        ck = cs[k]
        if ck == 0.0:
            term = 0.0
        else:
            lt = math.log(abs(ck)) + scale_log + (0.5 * n + k) * lnq - math.lgamma(0.5 * n + k + 1)
            if lt > 700.0:
                return total, k + 1, math.inf, math.inf, False
            term = math.copysign(math.exp(lt), ck) * (-1.0 if k % 2 else 1.0)
        total += term
        a = abs(term)
        peak = max(peak, a)
        decay = decay + 1 if a <= last else 0
        last = a
        if a < tol / 10.0 and decay >= 3:
            return total, k + 1, a, peak, True
    return total, _MAX_TERMS + 1, last, peak, False


def _series_mp(lam2, b, log_c0, q2, n, tol):
    """Multiprecision pass for ill-conditioned eigenvalue spreads."""
    rho = float(q2)  # peak term magnitude is roughly e^rho
    digits = int(0.5 * rho) + 40
    max_terms = int(4 * rho) + 600
    with mpmath.workdps(digits):
        inv2lam = [1 / (2 * mpmath.mpf(v)) for v in lam2]
        b2 = [mpmath.mpf(v) ** 2 for v in b]
        c0 = mpmath.e ** mpmath.mpf(log_c0)
        q_mp = mpmath.mpf(q2)
        cs = [mpmath.mpf(1)]
        ds = [mpmath.mpf(0)]
        pw = [mpmath.mpf(1)] * n
        total = mpmath.mpf(0)
        last = mpmath.inf
        decay = 0
        for k in range(max_terms + 1):
            if k > 0:
                pw = [pw[i] * inv2lam[i] for i in range(n)]
                ds.append(mpmath.fsum((1 - k * b2[i]) * pw[i] for i in range(n)) / 2)
                cs.append(mpmath.fsum(ds[j] * cs[k - j] for j in range(1, k + 1)) / k)
            term = (
                (-1 if k % 2 else 1)
                * cs[k]
                * q_mp ** (mpmath.mpf(n) / 2 + k)
                / mpmath.gamma(mpmath.mpf(n) / 2 + k + 1)
            )
            total += term
            a = abs(term)
            decay = decay + 1 if a <= last else 0
            last = a
            if a < tol / 10 and decay >= 3:
                return float(total * c0), k + 1, float(a * c0), True
        return float(total * c0), max_terms + 1, float(last * c0), False


def cdf_quadform(p: QuadFormProblem, tol: float = 1e-9) -> SeriesResult:
    """CDF of the quadratic form at its threshold, P(v <= q).

    Stops once the last term drops below tol/10 and terms have decayed for
    three consecutive indices; raises SeriesConvergenceError if the term cap
    is exhausted even under multiprecision evaluation (extreme eigenvalue
    spread).
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    guard = _tail_guards(p, tol)
    if guard is not None:
        return SeriesResult(value=guard, terms_used=0, truncation_bound=0.0)

    lam, b = _whiten(p)
    if lam.min() <= 0.0:
        raise NotPositiveDefiniteError("whitened form has nonpositive eigenvalue")
    n = p.mean.size
    # scale so that 2*min(lambda) = 1; P(v < q) is invariant and the
    # d_k powers stay bounded
    scale = 2.0 * float(lam.min())
    lam2 = lam / scale
    q2 = p.q / scale
    log_c0 = -0.5 * float(b @ b) - 0.5 * float(np.sum(np.log(2.0 * lam2)))

    total, terms, last, peak, converged = _series_float(lam2, b, log_c0, q2, n, tol)
    roundoff = peak * 1e-15
    if converged and roundoff <= max(tol, last):
        return SeriesResult(
            value=min(1.0, max(0.0, total)),
            terms_used=terms,
            truncation_bound=last if math.isfinite(last) else 0.0,
        )
    total, terms, last, converged = _series_mp(lam2, b, log_c0, q2, n, tol)
    if not converged:
        raise SeriesConvergenceError(
            f"series did not converge within {terms} terms "
            f"(eigenvalue spread ratio {q2:.3g})"
        )
    return SeriesResult(
        value=min(1.0, max(0.0, total)), terms_used=terms, truncation_bound=last
    )


def collision_prob_exact(rel: GaussianState, qc: Ellipsoid, tol: float = 1e-9) -> float:
    """Upper bound on collision probability: mass of `rel` inside `qc`.

    The relative-position covariance must be strictly PD; add jitter on the
    caller side for deterministic obstacles.
    """
    problem = QuadFormProblem(
        a_matrix=qc.inverse(), mean=rel.mean, cov=rel.cov, q=1.0
    )
    return cdf_quadform(problem, tol=tol).value
