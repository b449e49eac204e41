"""Polyhedral flight-corridor constraints on an inflated robot ellipsoid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .ellipsoids import Ellipsoid, psd_sqrt
from .errors import DimensionMismatchError, InfeasibleError


@dataclass(frozen=True)
class Polyhedron:
    """Halfspace intersection {x : a_rows x <= b} with unit-norm rows.

    Rows are normalized at construction so support-function terms are
    scale-consistent; the interior must be nonempty (Chebyshev feasibility).
    """

    a_rows: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_rows, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise DimensionMismatchError("a_rows/b row count mismatch")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero rows are not allowed")
        a = a / norms[:, None]
        b = b / norms
        center, radius = _chebyshev_center(a, b)
        if radius <= 0.0:
            raise InfeasibleError("polyhedron has empty interior")
        object.__setattr__(self, "a_rows", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_chebyshev", (center, radius))

    @property
    def dim(self) -> int:
        return self.a_rows.shape[1]

    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        return self._chebyshev

    def margin(self, point: np.ndarray) -> float:
        """Depth of a point: min over faces of b_i - a_i . x (negative outside)."""
        return float(np.min(self.b - self.a_rows @ np.asarray(point, dtype=float)))

    @staticmethod
    def from_box(min_corner, max_corner) -> "Polyhedron":
        lo = np.asarray(min_corner, dtype=float).reshape(-1)
        hi = np.asarray(max_corner, dtype=float).reshape(-1)
        if lo.size != hi.size or np.any(hi <= lo):
            raise ValueError("box corners must satisfy min < max componentwise")
        d = lo.size
        eye = np.eye(d)
        return Polyhedron(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))


_RADIUS_CAP = 1e9  # keeps the LP bounded for unbounded polyhedra


def _chebyshev_center(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Largest inscribed ball center/radius via a small LP.

    The radius variable is capped so that unbounded polyhedra (legitimate,
    e.g. half-space corridors) report a finite positive radius instead of an
    unbounded program.
    """
    n, d = a.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_ub = np.hstack([a, np.ones((n, 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b,
        bounds=[(None, None)] * d + [(0.0, _RADIUS_CAP)],
        method="highs",
    )
    if not res.success:
        return np.zeros(d), -np.inf
    return res.x[:d], float(res.x[d])


def corridor_residuals(
    center: np.ndarray, qa: Ellipsoid | None, poly: Polyhedron
) -> np.ndarray:
    """Per-face clearances of an ellipsoid (or point) inside a polyhedron.

    residual_i = b_i - a_i . center - ||Q^1/2 a_i||; nonnegative iff the
    ellipsoid at `center` stays inside halfspace i.  A None shape means a
    point robot, dropping the support term.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.size != poly.dim:
        raise DimensionMismatchError("center dimension mismatch")
    support = 0.0
    if qa is not None:
        if qa.dim != poly.dim:
            raise DimensionMismatchError("ellipsoid dimension mismatch")
        half = psd_sqrt(qa.shape)
        support = np.linalg.norm(poly.a_rows @ half, axis=1)
    return poly.b - poly.a_rows @ center - support


def assign_polyhedra(
    reference_points: np.ndarray, corridor: list[Polyhedron]
) -> np.ndarray:
    """Assign each reference point the covering polyhedron of maximal
    Chebyshev margin (point depth); ties break to the lowest index."""
    pts = np.atleast_2d(np.asarray(reference_points, dtype=float))
    if not corridor:
        raise ValueError("corridor must contain at least one polyhedron")
    out = np.empty(len(pts), dtype=int)
    for k, p in enumerate(pts):
        margins = [poly.margin(p) for poly in corridor]
        best = int(np.argmax(margins))
        if margins[best] < 0.0:
            raise InfeasibleError(
                f"reference point {k} at {p} lies outside every corridor polyhedron"
            )
        out[k] = best
    return out
