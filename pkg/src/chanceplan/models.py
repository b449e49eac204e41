"""Robot and obstacle dynamics, covariance propagation, and shape assembly.

The quadrotor model integrates Euler-angle attitude kinematics with a thrust
acceleration via fixed-step RK4; obstacles follow a constant-velocity model
under Euler integration.  Analytic Jacobians of both discrete maps back the
covariance propagation and the trajectory optimizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ellipsoids import Ellipsoid, minkowski_outer

GRAVITY = 9.81

_SKEW_X = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
_SKEW_Y = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
_SKEW_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def euler_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-world rotation for ZYX yaw-pitch-roll Euler angles."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def euler_rotation_derivs(
    phi: float, theta: float, psi: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Rotation matrix and its partial derivatives wrt the three angles."""
    r = euler_rotation(phi, theta, psi)
    cf, sf = math.cos(phi), math.sin(phi)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cf, -sf], [0.0, sf, cf]])
    d_phi = r @ _SKEW_X
    d_theta = r @ rx.T @ _SKEW_Y @ rx
    d_psi = _SKEW_Z @ r
    return r, d_phi, d_theta, d_psi


@dataclass(frozen=True)
class QuadrotorState:
    """Position, velocity, and roll/pitch/yaw attitude (angles wrapped)."""

    position: np.ndarray
    velocity: np.ndarray
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        object.__setattr__(self, "roll", wrap_angle(float(self.roll)))
        object.__setattr__(self, "pitch", wrap_angle(float(self.pitch)))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if abs(self.pitch) > 1.4:
            warnings.warn("pitch approaching gimbal singularity", RuntimeWarning)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.roll, self.pitch, self.yaw]])

    @staticmethod
    def from_vector(x: np.ndarray) -> "QuadrotorState":
        x = np.asarray(x, dtype=float).reshape(9)
        return QuadrotorState(x[0:3], x[3:6], x[6], x[7], x[8])


@dataclass(frozen=True)
class ObstacleState:
    """Constant-velocity obstacle: position, body-frame velocity, attitude
    angles and their (constant) rates."""

    position: np.ndarray
    velocity: np.ndarray
    angles: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        for name in ("position", "velocity", "angles", "rates"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.angles, self.rates])

    @staticmethod
    def from_vector(y: np.ndarray) -> "ObstacleState":
        y = np.asarray(y, dtype=float).reshape(12)
        return ObstacleState(y[0:3], y[3:6], y[6:9], y[9:12])


@dataclass(frozen=True)
class NoiseSpec:
    """Per-step process covariances for robot (W) and obstacles (V)."""

    process_cov: np.ndarray
    obstacle_cov: np.ndarray

    def __post_init__(self):
        for name in ("process_cov", "obstacle_cov"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-12:
                raise ValueError(f"{name} must be PSD")
            object.__setattr__(self, name, m)


# -- quadrotor ---------------------------------------------------------------


def _quad_deriv(x: np.ndarray, u: np.ndarray, mass: float, g: float) -> np.ndarray:
    thrust_dir = euler_rotation(x[6], x[7], x[8])[:, 2]
    xdot = np.empty(9)
    xdot[0:3] = x[3:6]
    xdot[3:6] = (u[3] / mass) * thrust_dir - np.array([0.0, 0.0, g])
    xdot[6:9] = u[0:3]
    return xdot


def _quad_deriv_jacobians(
    x: np.ndarray, u: np.ndarray, mass: float, g: float
) -> tuple[np.ndarray, np.ndarray]:
    r, d_phi, d_theta, d_psi = euler_rotation_derivs(x[6], x[7], x[8])
    fx = np.zeros((9, 9))
    fx[0:3, 3:6] = np.eye(3)
    scale = u[3] / mass
    fx[3:6, 6] = scale * d_phi[:, 2]
    fx[3:6, 7] = scale * d_theta[:, 2]
    fx[3:6, 8] = scale * d_psi[:, 2]
    fu = np.zeros((9, 4))
    fu[3:6, 3] = r[:, 2] / mass
    fu[6:9, 0:3] = np.eye(3)
    return fx, fu


def rk4_step(f, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_jacobians(f, fjac, x, u, dt):
    """Discrete-step Jacobians of an RK4 map by chain rule through the stages."""
    nx = x.size
    eye = np.eye(nx)
    k1 = f(x, u)
    a1, b1 = fjac(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = f(x2, u)
    a2, b2 = fjac(x2, u)
    dk2x = a2 @ (eye + 0.5 * dt * a1)
    dk2u = b2 + a2 @ (0.5 * dt * b1)
    x3 = x + 0.5 * dt * k2
    k3 = f(x3, u)
    a3, b3 = fjac(x3, u)
    dk3x = a3 @ (eye + 0.5 * dt * dk2x)
    dk3u = b3 + a3 @ (0.5 * dt * dk2u)
    x4 = x + dt * k3
    a4, b4 = fjac(x4, u)
    dk4x = a4 @ (eye + dt * dk3x)
    dk4u = b4 + a4 @ (dt * dk3u)
    fx = eye + (dt / 6.0) * (a1 + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    fu = (dt / 6.0) * (b1 + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return fx, fu


def quadrotor_step(
    s: QuadrotorState, u: np.ndarray, dt: float, mass: float, g: float = GRAVITY
) -> QuadrotorState:
    """One RK4 step of the thrust/attitude-rate quadrotor model.

    Control is [roll rate, pitch rate, yaw rate, collective thrust].
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    u = np.asarray(u, dtype=float).reshape(4)
    if u[3] < 0.0:
        raise ValueError("thrust must be nonnegative")
    nxt = rk4_step(lambda xv, uv: _quad_deriv(xv, uv, mass, g), s.as_vector(), u, dt)
    return QuadrotorState.from_vector(nxt)


# -- obstacle constant-velocity model ----------------------------------------


def obstacle_step(s: ObstacleState, dt: float) -> ObstacleState:
    """Euler step: position advances by the world-frame velocity, angles by
    their rates; body velocity and rates stay constant."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    r = euler_rotation(*s.angles)
    return ObstacleState(
        position=s.position + dt * (r @ s.velocity),
        velocity=s.velocity,
        angles=s.angles + dt * s.rates,
        rates=s.rates,
    )


def obstacle_step_jacobian(s: ObstacleState, dt: float) -> np.ndarray:
    """12x12 Jacobian of the Euler-integrated constant-velocity map."""
    r, d_phi, d_theta, d_psi = euler_rotation_derivs(*s.angles)
    f = np.eye(12)
    f[0:3, 3:6] = dt * r
    f[0:3, 6] = dt * (d_phi @ s.velocity)
    f[0:3, 7] = dt * (d_theta @ s.velocity)
    f[0:3, 8] = dt * (d_psi @ s.velocity)
    f[6:9, 9:12] = dt * np.eye(3)
    return f


# -- covariance propagation and shape assembly -------------------------------


def propagate_covariances(
    sigma0: np.ndarray, jacobians: list[np.ndarray], process_cov: np.ndarray
) -> list[np.ndarray]:
    """Open-loop covariance recursion Sigma <- F Sigma F^T + W.

    Returns the covariance at every step including the initial one, so the
    output has len(jacobians) + 1 entries.  Each update is re-symmetrized.
    """
    sigma = 0.5 * (np.asarray(sigma0, dtype=float) + np.asarray(sigma0, dtype=float).T)
    w = np.atleast_2d(np.asarray(process_cov, dtype=float))
    out = [sigma]
    for f in jacobians:
        sigma = f @ sigma @ f.T + w
        sigma = 0.5 * (sigma + sigma.T)
        out.append(sigma)
    return out


def augmented_shape(qx: Ellipsoid, qd: Ellipsoid, qo: Ellipsoid) -> Ellipsoid:
    """Collision-region shape for an uncertainty-inflated robot: left-to-right
    outer Minkowski fold of robot shape, reachable-set bound, and obstacle."""
    return minkowski_outer(minkowski_outer(qx, qd), qo)


def fold_shapes(parts: list[Ellipsoid | None]) -> Ellipsoid:
    """Left-to-right outer Minkowski fold over the non-degenerate parts.

    None entries (point shapes, absent reachable-set bounds) are skipped; a
    single surviving part is returned unchanged.
    """
    shapes = [p for p in parts if p is not None]
    if not shapes:
        raise ValueError("at least one non-point shape is required")
    acc = shapes[0]
    for nxt in shapes[1:]:
        acc = minkowski_outer(acc, nxt)
    return acc


# -- dynamics models for the optimizer ---------------------------------------


class PointMass2D:
    """Double integrator in the plane; state [p, v], control acceleration."""

    nx = 4
    nu = 2
    pos_slice = slice(0, 2)

    def __init__(self, dt: float):
        self.dt = float(dt)
        d = self.dt
        self._a = np.array(
            [[1.0, 0.0, d, 0.0], [0.0, 1.0, 0.0, d], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
        )
        self._b = np.array([[0.5 * d * d, 0.0], [0.0, 0.5 * d * d], [d, 0.0], [0.0, d]])

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self._a @ x + self._b @ u

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._a, self._b

    def hover_control(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(2)

    def braking_control(self, x: np.ndarray, bound: float) -> np.ndarray:
        v = x[2:4]
        return np.clip(-v / self.dt, -bound, bound)


class QuadrotorModel:
    """RK4-discretized quadrotor for the optimizer; state vector length 9."""

    nx = 9
    nu = 4
    pos_slice = slice(0, 3)

    def __init__(self, dt: float, mass: float, gravity: float = GRAVITY):
        self.dt = float(dt)
        self.mass = float(mass)
        self.gravity = float(gravity)

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return rk4_step(lambda xv, uv: _quad_deriv(xv, uv, self.mass, self.gravity), x, u, self.dt)

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return rk4_step_jacobians(
            lambda xv, uv: _quad_deriv(xv, uv, self.mass, self.gravity),
            lambda xv, uv: _quad_deriv_jacobians(xv, uv, self.mass, self.gravity),
            x,
            u,
            self.dt,
        )

    def hover_control(self, x: np.ndarray) -> np.ndarray:
        return np.array([0.0, 0.0, 0.0, self.mass * self.gravity])

    def braking_control(self, x: np.ndarray, bound: float) -> np.ndarray:
        u = self.hover_control(x)
        u[0] = math.copysign(min(abs(x[6]) / self.dt, bound), -x[6])
        u[1] = math.copysign(min(abs(x[7]) / self.dt, bound), -x[7])
        return u
