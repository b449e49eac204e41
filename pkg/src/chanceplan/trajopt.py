"""Direct-transcription trajectory optimization with chance constraints and
the iterative risk-tightening loop.

The NLP keeps full state and control knots as decision variables, enforces
dynamics defects as equalities and corridor/chance terms as inequalities via
an augmented-Lagrangian outer loop around a bounded quasi-Newton inner
minimizer.  Risk tightening solves the linearized-probability problem
repeatedly, re-evaluating each iterate with the exact estimator and steering
the allocated budget toward the prescribed total risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .corridor import Polyhedron, corridor_residuals
from .ellipsoids import Ellipsoid, GaussianState, psd_inv_sqrt
from .errors import DimensionMismatchError, InfeasibleError
from .estimators import erfinv
from .models import fold_shapes, propagate_covariances
from .quadform import collision_prob_exact

_EQ_TOL = 1e-6
_INEQ_TOL = 1e-6
_MAX_OUTER = 30
_PENALTY_GROWTH = 10.0
_INNER_GTOL = 1e-8


def _as_weight(w, dim: int) -> np.ndarray:
    m = np.asarray(w, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(dim)
    if m.shape != (dim, dim):
        raise DimensionMismatchError("weight matrix has wrong shape")
    if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-12:
        raise ValueError("weights must be PSD")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class CostWeights:
    """Quadratic weights: per-step tracking, terminal tracking, control
    effort, and control smoothness."""

    tracking: np.ndarray
    terminal: np.ndarray
    effort: np.ndarray
    smoothness: np.ndarray


@dataclass(frozen=True)
class ObstacleTrack:
    """Predicted obstacle positions/covariances per knot plus its shape."""

    means: np.ndarray  # (N, d)
    covs: np.ndarray  # (N, d, d)
    shape: Ellipsoid

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "covs", np.asarray(self.covs, dtype=float))
        if self.means.ndim != 2 or self.covs.shape != (*self.means.shape, self.means.shape[1]):
            raise DimensionMismatchError("track arrays have inconsistent shapes")


@dataclass
class TranscribedProblem:
    """Inputs of one horizon of trajectory optimization."""

    horizon_steps: int
    dt: float
    dynamics: object
    initial_state: np.ndarray
    reference_positions: np.ndarray  # (N, d)
    cost: CostWeights
    obstacles: list[ObstacleTrack] = field(default_factory=list)
    corridor: list[Polyhedron] = field(default_factory=list)
    corridor_assignment: np.ndarray | None = None
    control_low: np.ndarray | None = None
    control_high: np.ndarray | None = None
    robot_shape: Ellipsoid | None = None
    frs_shape: Ellipsoid | None = None
    initial_cov: np.ndarray | None = None
    process_noise: np.ndarray | None = None

    def __post_init__(self):
        n = self.horizon_steps
        if n < 2:
            raise ValueError("need at least two knots")
        self.initial_state = np.asarray(self.initial_state, dtype=float)
        self.reference_positions = np.asarray(self.reference_positions, dtype=float)
        if self.reference_positions.shape[0] != n:
            raise DimensionMismatchError("reference must have one position per knot")
        for track in self.obstacles:
            if track.means.shape[0] != n:
                raise DimensionMismatchError("obstacle tracks must have exactly N entries")
        if self.corridor and self.corridor_assignment is None:
            from .corridor import assign_polyhedra

            self.corridor_assignment = assign_polyhedra(self.reference_positions, self.corridor)

    @property
    def pos_dim(self) -> int:
        return self.reference_positions.shape[1]

    def collision_shape(self, track: ObstacleTrack) -> Ellipsoid:
        return fold_shapes([self.robot_shape, self.frs_shape, track.shape])

    def inflation_shape(self) -> Ellipsoid | None:
        if self.robot_shape is None and self.frs_shape is None:
            return None
        return fold_shapes([self.robot_shape, self.frs_shape])


@dataclass(frozen=True)
class Trajectory:
    """Knot states, controls, and the risk annotation of the solution."""

    states: np.ndarray  # (N, nx)
    controls: np.ndarray  # (N-1, nu)
    per_step_risk: np.ndarray  # (N,)
    total_risk: float

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "controls", np.asarray(self.controls, dtype=float))
        object.__setattr__(self, "per_step_risk", np.asarray(self.per_step_risk, dtype=float))
        if self.states.shape[0] != self.per_step_risk.size:
            raise DimensionMismatchError("risk annotation length mismatch")
        if self.controls.shape[0] != self.states.shape[0] - 1:
            raise DimensionMismatchError("need N-1 controls for N states")
        if abs(float(np.sum(self.per_step_risk)) - self.total_risk) > 1e-12:
            raise ValueError("total_risk must equal the sum of per-step risks")


@dataclass(frozen=True)
class RiskReport:
    """Risk accounting of a trajectory against all obstacle tracks."""

    per_step: np.ndarray
    total: float
    per_obstacle_max: np.ndarray


@dataclass(frozen=True)
class IterEntry:
    allocated: float | None  # None for the unconstrained relaxation
    achieved: float
    objective: float
    bracket_low: tuple[float, float]
    bracket_high: tuple[float, float]


@dataclass(frozen=True)
class IterTrace:
    iterations: list[IterEntry]
    converged: bool


@dataclass(frozen=True)
class NlpResult:
    trajectory: "Trajectory"
    converged: bool
    objective: float
    max_violation: float


# -- covariance assembly ------------------------------------------------------


def robot_position_covariances(
    problem: TranscribedProblem, states: np.ndarray, controls: np.ndarray
) -> np.ndarray:
    """Per-knot position covariance of the robot, open-loop propagated along
    the nominal trajectory (held fixed during inner NLP iterations)."""
    n = problem.horizon_steps
    d = problem.pos_dim
    if problem.initial_cov is None:
        return np.zeros((n, d, d))
    w = problem.process_noise
    if w is None:
        w = np.zeros_like(problem.initial_cov)
    jacobians = [
        problem.dynamics.jacobians(states[t], controls[min(t, len(controls) - 1)])[0]
        for t in range(n - 1)
    ]
    covs = propagate_covariances(problem.initial_cov, jacobians, w)
    sl = problem.dynamics.pos_slice
    return np.array([c[sl, sl] for c in covs])


def _relative_covs(problem: TranscribedProblem, robot_pos_covs: np.ndarray) -> list[np.ndarray]:
    out = []
    for track in problem.obstacles:
        out.append(robot_pos_covs + track.covs)
    return out


# -- cost and constraint machinery -------------------------------------------


class _Transcription:
    """Flattened decision vector [s_1..s_{N-1}, u_0..u_{N-2}] with analytic
    cost/constraint values and gradients."""

    def __init__(self, problem: TranscribedProblem, chance_delta: float | None,
                 rel_covs: list[np.ndarray], use_fd_gradients: bool = False):
        self.p = problem
        self.n = problem.horizon_steps
        self.model = problem.dynamics
        self.nx = self.model.nx
        self.nu = self.model.nu
        self.d = problem.pos_dim
        self.ns = self.n - 1  # free states and controls
        self.nz = self.ns * (self.nx + self.nu)
        self.chance_delta = chance_delta
        self.use_fd = use_fd_gradients
        self.pos = self.model.pos_slice

        w = problem.cost
        self.w_track = _as_weight(w.tracking, self.d)
        self.w_term = _as_weight(w.terminal, self.d)
        self.w_u = _as_weight(w.effort, self.nu)
        self.w_du = _as_weight(w.smoothness, self.nu)

        # corridor terms: constant support offset per step
        self.cor_terms = []
        if problem.corridor:
            qa = problem.inflation_shape()
            for t in range(1, self.n):
                poly = problem.corridor[int(problem.corridor_assignment[t])]
                base = corridor_residuals(np.zeros(self.d), qa, poly) - poly.b
                # residual(p) = b + base0 - A p where base0 folds the support term
                self.cor_terms.append((t, poly.a_rows, poly.b + base))

        # chance terms: whitened geometry per obstacle, fixed covariances
        self.chance_terms = []
        if chance_delta is not None:
            if not 0.0 < chance_delta < 0.5:
                raise ValueError("per-step chance delta must lie in (0, 0.5)")
            kappa = erfinv(1.0 - 2.0 * chance_delta)
            for j, track in enumerate(problem.obstacles):
                h = psd_inv_sqrt(problem.collision_shape(track).shape)
                ms = [h @ rel_covs[j][t] @ h for t in range(self.n)]
                self.chance_terms.append((track.means, h, ms, kappa))

        self.n_eq = self.ns * self.nx
        self.n_cor = sum(len(offset) for _, _, offset in self.cor_terms)
        self.n_chance = len(self.chance_terms) * (self.n - 1)

    # layout helpers
    def state_of(self, z, t):
        if t == 0:
            return self.p.initial_state
        o = (t - 1) * self.nx
        return z[o : o + self.nx]

    def control_of(self, z, t):
        o = self.ns * self.nx + t * self.nu
        return z[o : o + self.nu]

    def pack(self, states, controls):
        return np.concatenate([np.asarray(states)[1:].ravel(), np.asarray(controls).ravel()])

    def unpack(self, z):
        states = np.vstack([self.p.initial_state, z[: self.ns * self.nx].reshape(self.ns, self.nx)])
        controls = z[self.ns * self.nx :].reshape(self.ns, self.nu)
        return states, controls

    def bounds(self):
        bounds = [(None, None)] * (self.ns * self.nx)
        lo = self.p.control_low
        hi = self.p.control_high
        for _ in range(self.ns):
            for i in range(self.nu):
                bounds.append(
                    (None if lo is None else lo[i], None if hi is None else hi[i])
                )
        return bounds

    # objective
    def objective(self, z) -> tuple[float, np.ndarray]:
        states, controls = self.unpack(z)
        ref = self.p.reference_positions
        grad = np.zeros(self.nz)
        val = 0.0
        for t in range(1, self.n):
            w = self.w_term if t == self.n - 1 else self.w_track
            e = states[t][self.pos] - ref[t]
            val += float(e @ w @ e)
            go = (t - 1) * self.nx
            grad[go : go + self.nx][self.pos] += 2.0 * (w @ e)
        uo = self.ns * self.nx
        for t in range(self.ns):
            u = controls[t]
            val += float(u @ self.w_u @ u)
            grad[uo + t * self.nu : uo + (t + 1) * self.nu] += 2.0 * (self.w_u @ u)
        for t in range(1, self.ns):
            du = controls[t] - controls[t - 1]
            val += float(du @ self.w_du @ du)
            g = 2.0 * (self.w_du @ du)
            grad[uo + t * self.nu : uo + (t + 1) * self.nu] += g
            grad[uo + (t - 1) * self.nu : uo + t * self.nu] -= g
        return val, grad

    # constraints
    def defects(self, states, controls) -> np.ndarray:
        e = np.empty((self.ns, self.nx))
        for t in range(self.ns):
            e[t] = states[t + 1] - self.model.step(states[t], controls[t])
        return e.ravel()

    def inequalities(self, states) -> np.ndarray:
        vals = []
        for t, a_rows, offset in self.cor_terms:
            vals.extend(offset - a_rows @ states[t][self.pos])
        for means, h, ms, kappa in self.chance_terms:
            for t in range(1, self.n):
                vals.append(self._chance_residual(states[t][self.pos], means[t], h, ms[t], kappa)[0])
        return np.asarray(vals, dtype=float)

    @staticmethod
    def _chance_residual(pos, obs_mean, h, m, kappa):
        rel = obs_mean - pos
        y = h @ rel
        t = float(np.linalg.norm(y))
        if t < 1e-8:
            # pathological overlap of means; push along a fixed axis
            y = h @ np.eye(len(rel))[0] * 1e-8
            t = float(np.linalg.norm(y))
        s = math.sqrt(max(2.0 * float(y @ m @ y), 1e-300))
        res = t - 1.0 - kappa * s / t
        grad_y = y / t - kappa * (2.0 * (m @ y) / (s * t) - s * y / t**3)
        return res, -(h @ grad_y)  # gradient wrt robot position

    # augmented Lagrangian value/gradient
    def aug_lagrangian(self, z, lam, nu, mu):
        states, controls = self.unpack(z)
        val, grad = self.objective(z)
        uo = self.ns * self.nx

        # equalities
        for t in range(self.ns):
            e = states[t + 1] - self.model.step(states[t], controls[t])
            l = lam[t * self.nx : (t + 1) * self.nx]
            val += float(-l @ e + 0.5 * mu * (e @ e))
            r = mu * e - l
            grad[t * self.nx : (t + 1) * self.nx] += r
            fx, fu = self.model.jacobians(states[t], controls[t])
            if t >= 1:
                grad[(t - 1) * self.nx : t * self.nx] -= fx.T @ r
            grad[uo + t * self.nu : uo + (t + 1) * self.nu] -= fu.T @ r

        # inequalities, Rockafellar form for g >= 0
        idx = 0
        for t, a_rows, offset in self.cor_terms:
            g = offset - a_rows @ states[t][self.pos]
            for i in range(len(g)):
                coef = max(0.0, nu[idx] - mu * g[i])
                val += (coef * coef - nu[idx] * nu[idx]) / (2.0 * mu)
                if coef > 0.0:
                    go = (t - 1) * self.nx
                    grad[go : go + self.nx][self.pos] += coef * a_rows[i]
                idx += 1
        for means, h, ms, kappa in self.chance_terms:
            for t in range(1, self.n):
                g, gpos = self._chance_residual(states[t][self.pos], means[t], h, ms[t], kappa)
                coef = max(0.0, nu[idx] - mu * g)
                val += (coef * coef - nu[idx] * nu[idx]) / (2.0 * mu)
                if coef > 0.0:
                    go = (t - 1) * self.nx
                    grad[go : go + self.nx][self.pos] += -coef * gpos
                idx += 1
        return val, grad

    def aug_lagrangian_fd(self, z, lam, nu, mu):
        f0, _ = self.aug_lagrangian(z, lam, nu, mu)
        g = np.zeros_like(z)
        h = 1e-7
        for i in range(z.size):
            zp = z.copy()
            zp[i] += h
            g[i] = (self.aug_lagrangian(zp, lam, nu, mu)[0] - f0) / h
        return f0, g


def _initial_guess(tr: _Transcription) -> np.ndarray:
    p = tr.p
    states = np.zeros((tr.n, tr.nx))
    states[0] = p.initial_state
    controls = np.zeros((tr.ns, tr.nu))
    ref = p.reference_positions
    for t in range(1, tr.n):
        states[t] = states[0].copy()
        states[t][tr.pos] = ref[t]
        vel = (ref[min(t + 1, tr.n - 1)] - ref[max(t - 1, 0)]) / (
            (min(t + 1, tr.n - 1) - max(t - 1, 0)) * p.dt
        )
        vs = slice(tr.pos.stop, tr.pos.stop + tr.d)
        states[t][vs] = vel
    for t in range(tr.ns):
        controls[t] = tr.model.hover_control(states[t])
    return tr.pack(states, controls)


def _violations(tr: _Transcription, z) -> float:
    states, controls = tr.unpack(z)
    v = float(np.max(np.abs(tr.defects(states, controls)))) if tr.ns else 0.0
    g = tr.inequalities(states)
    if g.size:
        v = max(v, float(max(0.0, -g.min())))
    return v


def solve_nlp_full(
    problem: TranscribedProblem,
    chance_delta: float | None = None,
    warm_start: Trajectory | None = None,
    use_fd_gradients: bool = False,
) -> NlpResult:
    """Augmented-Lagrangian solve of the transcribed problem.

    Raises InfeasibleError when constraint violations stay far above
    tolerance at the outer-iteration cap; returns best-so-far flagged
    non-converged when they are close but not within tolerance.
    """
    nominal = warm_start
    if nominal is not None:
        nominal_states, nominal_controls = nominal.states, nominal.controls
    else:
        model = problem.dynamics
        nominal_states = np.zeros((problem.horizon_steps, model.nx))
        nominal_states[0] = problem.initial_state
        nominal_controls = np.array(
            [model.hover_control(problem.initial_state)] * (problem.horizon_steps - 1)
        )
        for t in range(problem.horizon_steps - 1):
            nominal_states[t + 1] = model.step(nominal_states[t], nominal_controls[t])
    robot_covs = robot_position_covariances(problem, nominal_states, nominal_controls)
    rel_covs = _relative_covs(problem, robot_covs)

    tr = _Transcription(problem, chance_delta, rel_covs, use_fd_gradients)
    if warm_start is not None:
        z = tr.pack(warm_start.states, warm_start.controls)
    else:
        z = _initial_guess(tr)

    lam = np.zeros(tr.n_eq)
    nu = np.zeros(tr.n_cor + tr.n_chance)
    mu = 10.0
    prev_viol = math.inf
    best_z, best_viol = z.copy(), _violations(tr, z)

    fun = tr.aug_lagrangian_fd if use_fd_gradients else tr.aug_lagrangian
    for _ in range(_MAX_OUTER):
        res = minimize(
            lambda zz: fun(zz, lam, nu, mu),
            z,
            jac=True,
            method="L-BFGS-B",
            bounds=tr.bounds(),
            options={"maxiter": 400, "gtol": _INNER_GTOL, "ftol": 1e-14},
        )
        z = res.x
        states, controls = tr.unpack(z)
        e = tr.defects(states, controls)
        g = tr.inequalities(states)
        viol = max(
            float(np.max(np.abs(e))) if e.size else 0.0,
            float(max(0.0, -g.min())) if g.size else 0.0,
        )
        if viol < best_viol:
            best_z, best_viol = z.copy(), viol
        lam = lam - mu * e
        if g.size:
            nu = np.maximum(0.0, nu - mu * g)
        if viol <= min(_EQ_TOL, _INEQ_TOL):
            break
        if viol > 0.25 * prev_viol:
            mu = min(mu * _PENALTY_GROWTH, 1e10)
        prev_viol = viol

    z = best_z if best_viol < _violations(tr, z) else z
    states, controls = tr.unpack(z)
    viol = _violations(tr, z)
    converged = viol <= min(_EQ_TOL, _INEQ_TOL)
    if not converged and viol > 1e-2:
        raise InfeasibleError(f"constraint violation {viol:.3e} at outer-iteration cap")

    objective, _ = tr.objective(z)

    # keep a feasible warm start if it scores better under this problem
    if warm_start is not None and converged:
        zw = tr.pack(warm_start.states, warm_start.controls)
        if _violations(tr, zw) <= min(_EQ_TOL, _INEQ_TOL):
            obj_w, _ = tr.objective(zw)
            if obj_w < objective:
                states, controls = tr.unpack(zw)
                objective = obj_w

    traj = _annotate_risk(problem, states, controls, rel_covs)
    return NlpResult(trajectory=traj, converged=converged, objective=objective, max_violation=viol)


def solve_nlp(
    problem: TranscribedProblem,
    chance_delta: float | None = None,
    warm_start: Trajectory | None = None,
) -> Trajectory:
    return solve_nlp_full(problem, chance_delta, warm_start).trajectory


def _annotate_risk(problem, states, controls, rel_covs) -> Trajectory:
    per_step = _per_step_risk(problem, states, rel_covs)
    return Trajectory(
        states=states,
        controls=controls,
        per_step_risk=per_step,
        total_risk=float(np.sum(per_step)),
    )


def _per_step_risk(problem, states, rel_covs) -> np.ndarray:
    n = problem.horizon_steps
    per_step = np.zeros(n)
    pos = problem.dynamics.pos_slice
    shapes = [problem.collision_shape(tr) for tr in problem.obstacles]
    for t in range(n):
        worst = 0.0
        for j, track in enumerate(problem.obstacles):
            rel = GaussianState(track.means[t] - states[t][pos], rel_covs[j][t])
            worst = max(worst, collision_prob_exact(rel, shapes[j]))
        per_step[t] = worst
    return per_step


def objective_value(problem: TranscribedProblem, traj: Trajectory) -> float:
    tr = _Transcription(problem, None, _relative_covs(
        problem, robot_position_covariances(problem, traj.states, traj.controls)))
    return tr.objective(tr.pack(traj.states, traj.controls))[0]


def trajectory_risk(traj: Trajectory, problem: TranscribedProblem) -> RiskReport:
    """Re-evaluate a trajectory's risk: per step the maximum exact collision
    probability across obstacles, summed over steps (the sum may exceed 1)."""
    robot_covs = robot_position_covariances(problem, traj.states, traj.controls)
    rel_covs = _relative_covs(problem, robot_covs)
    n = problem.horizon_steps
    pos = problem.dynamics.pos_slice
    shapes = [problem.collision_shape(tr) for tr in problem.obstacles]
    per_step = np.zeros(n)
    per_obstacle = np.zeros((max(len(problem.obstacles), 1), n))
    for t in range(n):
        for j, track in enumerate(problem.obstacles):
            rel = GaussianState(track.means[t] - traj.states[t][pos], rel_covs[j][t])
            per_obstacle[j, t] = collision_prob_exact(rel, shapes[j])
        per_step[t] = per_obstacle[:, t].max() if problem.obstacles else 0.0
    return RiskReport(
        per_step=per_step,
        total=float(np.sum(per_step)),
        per_obstacle_max=per_obstacle.max(axis=1),
    )


def iter_traj_opt(
    problem: TranscribedProblem,
    total_delta: float,
    precision: float | None = None,
    max_iterations: int = 10,
) -> tuple[Trajectory, IterTrace]:
    """Iterative tightening toward a prescribed total risk.

    Solves the unconstrained relaxation first; if its risk already meets the
    budget it is returned outright.  Otherwise the linearized-probability
    problem is solved with uniform per-step allocation, the achieved exact
    risk is measured, and the allocation is rescaled by target/achieved
    (clamped into the maintained bracket, falling back to bracket
    interpolation and bisection) until the achieved risk is within
    `precision` of the budget.  Each solve warm-starts from the previous one.
    """
    if total_delta <= 0.0:
        raise ValueError("total_delta must be positive")
    if precision is None:
        precision = 0.01 * total_delta
    if precision <= 0.0:
        raise ValueError("precision must be positive")

    n = problem.horizon_steps
    relax = solve_nlp_full(problem)
    d0 = relax.trajectory.total_risk
    entries = [
        IterEntry(
            allocated=None,
            achieved=d0,
            objective=relax.objective,
            bracket_low=(0.0, 0.0),
            bracket_high=(float(n), d0),
        )
    ]
    if d0 <= total_delta:
        return relax.trajectory, IterTrace(iterations=entries, converged=True)

    low_alloc, low_risk = 0.0, 0.0
    high_alloc, high_risk = float(n), d0
    alloc = total_delta  # conservative first allocation: achieved risk <= budget
    warm = relax.trajectory
    best = None  # (gap, trajectory) among feasible iterates
    most_conservative = None

    converged = False
    result = relax.trajectory
    for _ in range(max_iterations):
        per_step = min(alloc / n, 0.4999999)
        per_step = max(per_step, 1e-12)
        sol = solve_nlp_full(problem, chance_delta=per_step, warm_start=warm)
        dk = sol.trajectory.total_risk
        warm = sol.trajectory

        if dk < total_delta:
            low_alloc, low_risk = alloc, dk
        else:
            high_alloc, high_risk = alloc, dk
        entries.append(
            IterEntry(
                allocated=alloc,
                achieved=dk,
                objective=sol.objective,
                bracket_low=(low_alloc, low_risk),
                bracket_high=(high_alloc, high_risk),
            )
        )

        gap = abs(dk - total_delta)
        if dk <= total_delta + precision and (best is None or gap < best[0]):
            best = (gap, sol.trajectory)
        if most_conservative is None or dk < most_conservative[0]:
            most_conservative = (dk, sol.trajectory)

        if gap <= precision:
            converged = True
            result = sol.trajectory
            break

        # proportional rescale toward the target, safeguarded by the bracket
        nxt = alloc * (total_delta / dk) if dk > 0.0 else math.inf
        if not (low_alloc < nxt < high_alloc):
            if high_risk > low_risk:
                nxt = low_alloc + (high_alloc - low_alloc) * (total_delta - low_risk) / (
                    high_risk - low_risk
                )
            else:
                nxt = 0.5 * (low_alloc + high_alloc)
        if not (low_alloc < nxt < high_alloc):
            nxt = 0.5 * (low_alloc + high_alloc)
        alloc = nxt

    if not converged:
        result = best[1] if best is not None else most_conservative[1]
    return result, IterTrace(iterations=entries, converged=converged)
