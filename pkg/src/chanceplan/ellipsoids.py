"""Ellipsoid geometry: shape matrices, outer Minkowski bound, support points,
and the principal-axis transform of a Gaussian relative-position state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDirectionError,
    DegenerateShapeError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
)

_SYM_RTOL = 1e-12


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


def _check_symmetric(m: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.abs(m).max()))
    if float(np.abs(m - m.T).max()) > _SYM_RTOL * scale:
        raise NotPositiveDefiniteError(f"{name} is not symmetric")


def eigh_descending(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues sorted descending.

    Each eigenvector's first component with magnitude above 1e-12 is made
    positive, so the decomposition is deterministic across calls.
    """
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0.0:
            vecs[:, j] = -col
    return vals, vecs


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def psd_inv_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a strictly PD matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals.min() <= 0.0:
        raise NotPositiveDefiniteError("matrix is not strictly positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class Ellipsoid:
    """Center-free ellipsoid {x : x^T shape^-1 x <= 1}.

    `shape` is a symmetric positive-definite d x d matrix (d in {2, 3});
    its eigenvalues are the squared semi-axis lengths.
    """

    shape: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError("shape matrix must be square")
        if m.shape[0] not in (1, 2, 3):
            raise DimensionMismatchError(f"unsupported dimension {m.shape[0]}")
        _check_symmetric(m, "shape")
        vals = np.linalg.eigvalsh(m)
        if vals.min() <= 0.0:
            raise NotPositiveDefiniteError("shape matrix must be strictly PD")
        if vals.min() < 1e-12 * vals.max():
            raise DegenerateShapeError(
                "shape matrix is numerically singular; callers must add "
                "jitter deliberately rather than rely on regularization"
            )
        object.__setattr__(self, "shape", _as_readonly(m))

    @property
    def dim(self) -> int:
        return self.shape.shape[0]

    @property
    def semi_axes(self) -> np.ndarray:
        """Semi-axis lengths, sorted descending."""
        return np.sqrt(eigh_descending(self.shape)[0])

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.shape)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership test for one point or an (n, d) array of points."""
        pts = np.atleast_2d(points)
        q = np.einsum("ij,jk,ik->i", pts, self.inverse(), pts)
        res = q <= 1.0 + tol
        return res if np.asarray(points).ndim > 1 else bool(res[0])

    @staticmethod
    def from_semi_axes(semi_axes, rotation: np.ndarray | None = None) -> "Ellipsoid":
        s = np.asarray(semi_axes, dtype=float)
        m = np.diag(s**2)
        if rotation is not None:
            r = np.asarray(rotation, dtype=float)
            m = r @ m @ r.T
        return Ellipsoid(m)


@dataclass(frozen=True)
class GaussianState:
    """Gaussian position state: mean (m) and covariance (m^2)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=float).reshape(-1)
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (mu.size, mu.size):
            raise DimensionMismatchError("cov shape does not match mean length")
        _check_symmetric(c, "cov")
        vals = np.linalg.eigvalsh(c)
        if vals.min() < -1e-12 * max(1.0, vals.max()):
            raise NotPositiveDefiniteError("cov must be positive semidefinite")
        object.__setattr__(self, "mean", _as_readonly(mu))
        object.__setattr__(self, "cov", _as_readonly(c))

    @property
    def dim(self) -> int:
        return self.mean.size


def minkowski_outer(qx: Ellipsoid, qo: Ellipsoid) -> Ellipsoid:
    """Outer ellipsoidal bound of the Minkowski sum of two ellipsoids.

    Returns (1 + a) * qx.shape + (1 + 1/a) * qo.shape with a equal to the
    trace quotient tr(qo) / tr(qx).  The classical minimum-trace outer bound
    uses the square root of that quotient instead; containment of the true
    Minkowski sum holds for any positive mixing ratio, so the plain quotient
    is kept.  The operation is not symmetric in its arguments: swapping them
    gives a different (also containing) matrix.
    """
    if qx.dim != qo.dim:
        raise DimensionMismatchError("ellipsoid dimensions differ")
    alpha = float(np.trace(qo.shape) / np.trace(qx.shape))
    if alpha < 1e-12:
        raise DegenerateShapeError("second ellipsoid is degenerate relative to first")
    return Ellipsoid((1.0 + alpha) * qx.shape + (1.0 + 1.0 / alpha) * qo.shape)


def support_point(q: Ellipsoid, center: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Boundary point of the ellipsoid extremal along direction `a`.

    Maximizes a.x over {x : (x - center)^T Q^-1 (x - center) <= 1}; the
    maximizer is center + Q a / sqrt(a^T Q a).
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    center = np.asarray(center, dtype=float).reshape(-1)
    if a.size != q.dim or center.size != q.dim:
        raise DimensionMismatchError("direction/center dimension mismatch")
    denom = float(a @ q.shape @ a)
    if denom <= 0.0 or float(np.linalg.norm(a)) < 1e-300:
        raise DegenerateDirectionError("direction vector must be nonzero")
    return center + (q.shape @ a) / np.sqrt(denom)


def to_principal_axes(rel: GaussianState, qc: Ellipsoid) -> tuple[GaussianState, Ellipsoid]:
    """Rotate a relative-position state into its covariance principal axes.

    With R the (deterministically ordered) eigenvector matrix of rel.cov,
    the state maps to r = R^T p and the collision ellipsoid to R^T Q R, so
    the transformed covariance is exactly diagonal and the probability mass
    inside the ellipsoid is unchanged (orthogonal change of variables).
    """
    if rel.dim != qc.dim:
        raise DimensionMismatchError("state/ellipsoid dimension mismatch")
    vals, r = eigh_descending(rel.cov)
    if vals.min() <= 0.0 or vals.min() < 1e-15 * vals.max():
        raise NotPositiveDefiniteError("relative covariance is singular")
    mean_r = r.T @ rel.mean
    cov_r = np.diag(vals)
    shape_r = r.T @ qc.shape @ r
    return GaussianState(mean_r, cov_r), Ellipsoid(0.5 * (shape_r + shape_r.T))
