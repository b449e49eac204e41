"""Baseline collision-probability estimators and the Monte Carlo oracle.

Provides the linearized probability (half-space bound) with its deterministic
chance-constraint residual, the center-point density approximation, and a
seeded counter-based Monte Carlo estimate used as ground-truth oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ellipsoids import Ellipsoid, GaussianState, psd_inv_sqrt
from .errors import DegenerateDirectionError

_MC_CHUNK = 1_000_000

# Polynomial initializer for erfinv (central branch in w = -ln(1-x^2) about
# 2.5, tail branch in sqrt(w) about 3), refined by two Newton steps on erf.
_ERFINV_CENTRAL = (
    2.81022636e-08,
    3.43273939e-07,
    -3.5233877e-06,
    -4.39150654e-06,
    0.00021858087,
    -0.00125372503,
    -0.00417768164,
    0.246640727,
    1.50140941,
)
_ERFINV_TAIL = (
    -0.000200214257,
    0.000100950558,
    0.00134934322,
    -0.00367342844,
    0.00573950773,
    -0.0076224613,
    0.00943887047,
    1.00167406,
    2.83297682,
)


def erfinv(x: float) -> float:
    """Inverse error function on (-1, 1).

    Polynomial first guess followed by two Newton corrections on erf, which
    takes the result to within a few ulp (well inside 1e-9 absolute).
    """
    if not -1.0 < x < 1.0:
        raise ValueError("erfinv argument must lie in (-1, 1)")
    if x == 0.0:
        return 0.0
    w = -math.log((1.0 - x) * (1.0 + x))
    if w < 5.0:
        w -= 2.5
        coeffs = _ERFINV_CENTRAL
    else:
        w = math.sqrt(w) - 3.0
        coeffs = _ERFINV_TAIL
    y = coeffs[0]
    for c in coeffs[1:]:
        y = y * w + c
    y *= x
    for _ in range(2):
        err = math.erf(y) - x
        y -= err * 0.5 * math.sqrt(math.pi) * math.exp(y * y)
    return y


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo estimate with its 3-sigma binomial half width."""

    value: float
    half_width_3sigma: float
    samples: int
    seed: int

    def __post_init__(self):
        expected = 3.0 * math.sqrt(self.value * (1.0 - self.value) / self.samples)
        if abs(self.half_width_3sigma - expected) > 1e-12:
            raise ValueError("half_width_3sigma inconsistent with value/samples")


def collision_prob_linearized(rel: GaussianState, qc: Ellipsoid) -> float:
    """Mass of the half-space tangent to the collision ellipsoid.

    The half-space contains the ellipsoid, so this always upper-bounds the
    exact ellipsoid mass.  Undefined for a relative mean at the origin
    (callers should treat that as probability 1).
    """
    h = psd_inv_sqrt(qc.shape)
    y = h @ rel.mean
    t = float(np.linalg.norm(y))
    if t < 1e-12:
        raise DegenerateDirectionError("relative mean at origin; treat as probability 1")
    a = y / t
    var = 2.0 * float(a @ h @ rel.cov @ h @ a)
    return 0.5 + 0.5 * math.erf((1.0 - t) / math.sqrt(var))


def chance_constraint_residual(
    rel_mean: np.ndarray, cov: np.ndarray, qc: Ellipsoid, delta: float
) -> float:
    """Deterministic residual equivalent to the linearized chance constraint.

    Positive iff the linearized collision probability is below `delta`.
    Smooth in rel_mean away from the origin, so it can be used directly as an
    NLP inequality.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    rel_mean = np.asarray(rel_mean, dtype=float).reshape(-1)
    h = psd_inv_sqrt(qc.shape)
    y = h @ rel_mean
    t = float(np.linalg.norm(y))
    if t < 1e-12:
        raise DegenerateDirectionError("relative mean at origin")
    m = h @ np.asarray(cov, dtype=float) @ h
    s = math.sqrt(2.0 * float(y @ m @ y))
    return t - 1.0 - erfinv(1.0 - 2.0 * delta) * s / t


def chance_constraint_residual_grad(
    rel_mean: np.ndarray, cov: np.ndarray, qc: Ellipsoid, delta: float
) -> np.ndarray:
    """Gradient of chance_constraint_residual with respect to rel_mean."""
    rel_mean = np.asarray(rel_mean, dtype=float).reshape(-1)
    h = psd_inv_sqrt(qc.shape)
    y = h @ rel_mean
    t = float(np.linalg.norm(y))
    if t < 1e-12:
        raise DegenerateDirectionError("relative mean at origin")
    m = h @ np.asarray(cov, dtype=float) @ h
    s = math.sqrt(2.0 * float(y @ m @ y))
    kappa = erfinv(1.0 - 2.0 * delta)
    grad_y = y / t - kappa * (2.0 * (m @ y) / (s * t) - s * y / t**3)
    return h @ grad_y


def collision_prob_mc(
    rel: GaussianState, qc: Ellipsoid, samples: int, seed: int
) -> McEstimate:
    """Plain seeded Monte Carlo estimate of the ellipsoid mass.

    Uses a counter-based Philox stream so results are bit-reproducible for a
    fixed seed and independent streams can be derived per batch.
    """
    if samples < 1_000:
        raise ValueError("need at least 1000 samples")
    rng = np.random.Generator(np.random.Philox(key=seed))
    chol = np.linalg.cholesky(rel.cov)
    inv = qc.inverse()
    d = rel.dim
    hits = 0
    done = 0
    while done < samples:
        m = min(_MC_CHUNK, samples - done)
        x = rel.mean + rng.standard_normal((m, d)) @ chol.T
        hits += int(np.count_nonzero(np.einsum("ij,jk,ik->i", x, inv, x) < 1.0))
        done += m
    value = hits / samples
    return McEstimate(
        value=value,
        half_width_3sigma=3.0 * math.sqrt(value * (1.0 - value) / samples),
        samples=samples,
        seed=seed,
    )


_UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


def collision_prob_center(rel: GaussianState, qc: Ellipsoid) -> float:
    """Density-at-center approximation: pdf at the collision center times the
    ellipsoid volume, clamped to [0, 1].  Kept as a benchmark comparator; it
    carries no accuracy contract."""
    d = rel.dim
    det_cov = float(np.linalg.det(rel.cov))
    maha = float(rel.mean @ np.linalg.solve(rel.cov, rel.mean))
    pdf0 = math.exp(-0.5 * maha) / math.sqrt((2.0 * math.pi) ** d * det_cov)
    volume = _UNIT_BALL_VOLUME[d] * math.sqrt(float(np.linalg.det(qc.shape)))
    return min(1.0, pdf0 * volume)
