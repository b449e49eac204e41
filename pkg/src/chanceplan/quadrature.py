"""Gauss-Hermite quadrature approximation of the collision probability.

After rotating into the covariance principal axes the dimensions are
independent, and the probability mass inside the collision ellipsoid becomes
a d-fold integral of an indicator against separable Gaussian weights.  Each
axis is handled by an n-node Hermite rule, giving the flattened weighted sum
over the n^d logical grid.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermite

from .ellipsoids import Ellipsoid, GaussianState, to_principal_axes

_MAX_NODES = 512
_rules: dict[int, "HermiteRule"] = {}
_rules_lock = threading.Lock()


@dataclass(frozen=True)
class HermiteRule:
    """Nodes (roots of the physicists' Hermite polynomial H_n) and weights.

    Weights are positive and sum to sqrt(pi).  For n beyond roughly 370 the
    extreme-tail weights fall below the smallest positive float64 and
    evaluate to exactly zero; they are kept as returned.
    """

    n: int
    nodes: np.ndarray
    weights: np.ndarray


def hermite_rule(n: int) -> HermiteRule:
    """Memoized n-point Gauss-Hermite rule, 1 <= n <= 512."""
    if not 1 <= n <= _MAX_NODES:
        raise ValueError(f"node count must be in [1, {_MAX_NODES}], got {n}")
    rule = _rules.get(n)
    if rule is not None:
        return rule
    with _rules_lock:
        rule = _rules.get(n)
        if rule is None:
            nodes, weights = roots_hermite(n)
            nodes = nodes.copy()
            weights = weights.copy()
            nodes.flags.writeable = False
            weights.flags.writeable = False
            rule = HermiteRule(n=n, nodes=nodes, weights=weights)
            _rules[n] = rule
    return rule


def grid_points(n: int, d: int) -> int:
    """Logical indicator-grid size of the d-dimensional rule."""
    return n**d


def collision_prob_gh(
    rel: GaussianState, qc: Ellipsoid, n: int = 10, prune: bool = True
) -> float:
    """Quadrature estimate of the probability mass of `rel` inside `qc`.

    `prune` skips axis slices that cannot intersect the ellipsoid's bounding
    box; pruned and unpruned evaluations are bit-identical because skipped
    slices contribute exactly zero.
    """
    state, region = to_principal_axes(rel, qc)
    d = state.dim
    rule = hermite_rule(n)
    sig = np.sqrt(np.diag(state.cov))
    # node coordinates per axis after the variable change z -> sqrt(2) s z + m
    coords = [math.sqrt(2.0) * sig[i] * rule.nodes + state.mean[i] for i in range(d)]
    a = region.inverse()
    a = 0.5 * (a + a.T)
    ext = np.sqrt(np.diag(region.shape))  # per-axis extent of the region

    w = rule.weights
    if d == 1:
        inside = coords[0] ** 2 * a[0, 0] < 1.0
        total = float(np.sum(np.where(inside, w, 0.0)))
        return total * math.pi ** -0.5
    if d == 2:
        r1, r2 = coords
        total = 0.0
        for j1 in range(n):
            if prune and abs(r1[j1]) > ext[0]:
                continue
            quad = a[0, 0] * r1[j1] ** 2 + 2.0 * a[0, 1] * r1[j1] * r2 + a[1, 1] * r2 * r2
            total += w[j1] * float(np.sum(np.where(quad < 1.0, w, 0.0)))
        return total * math.pi ** -1.0
    # d == 3
    r1, r2, r3 = coords
    w23 = np.outer(w, w)
    cross = (
        np.outer(a[1, 1] * r2 * r2, np.ones(n))
        + 2.0 * a[1, 2] * np.outer(r2, r3)
        + np.outer(np.ones(n), a[2, 2] * r3 * r3)
    )
    total = 0.0
    for j1 in range(n):
        if prune and abs(r1[j1]) > ext[0]:
            continue
        quad = (
            a[0, 0] * r1[j1] ** 2
            + 2.0 * a[0, 1] * r1[j1] * r2[:, None]
            + 2.0 * a[0, 2] * r1[j1] * r3[None, :]
            + cross
        )
        total += w[j1] * float(np.sum(np.where(quad < 1.0, w23, 0.0)))
    return total * math.pi ** -1.5
