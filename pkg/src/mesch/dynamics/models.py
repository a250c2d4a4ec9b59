"""Continuous-time vehicle models: quadrotor, double integrator, unicycle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .quaternion import H, hat, quat_left, quat_right, rotation_matrix


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class QuadrotorParams:
    """Rigid-body and plus-configuration mixer parameters.

    Rotor ``i`` produces thrust ``u_i`` (N) along body z. Rotors 1..4 sit on
    the +x, +y, -x, -y arms at distance ``arm``; ``km`` converts thrust to
    reaction torque about body z (rotors 1, 3 spin opposite to 2, 4).
    """

    mass: float = 0.5
    inertia: tuple = (0.0023, 0.0023, 0.004)
    arm: float = 0.175
    km: float = 0.0245
    gravity: float = 9.81
    J: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    J_inv: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    mixer: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigurationError("quadrotor mass must be positive")
        J = np.asarray(self.inertia, dtype=float)
        if J.ndim == 1:
            J = np.diag(J)
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ConfigurationError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(J)) <= 0:
            raise ConfigurationError("inertia must be positive definite")
        L, km = self.arm, self.km
        mixer = np.array([
            [0.0, L, 0.0, -L],
            [-L, 0.0, L, 0.0],
            [km, -km, km, -km],
        ])
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "J_inv", np.linalg.inv(J))
        object.__setattr__(self, "mixer", mixer)

    @property
    def hover_thrust(self) -> float:
        """Per-rotor thrust that balances gravity."""
        return self.mass * self.gravity / 4.0

    def kernel_params(self) -> NDArray[np.float64]:
        return np.concatenate([
            [self.mass, self.gravity, self.arm, self.km],
            self.J.ravel(), self.J_inv.ravel(),
        ])


def quadrotor_deriv(x: ArrayLike, u: ArrayLike, p: QuadrotorParams) -> NDArray[np.float64]:
    """State derivative of the 13-state quadrotor ``[r, q, v, omega]``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q, v, w = x[3:7], x[7:10], x[10:13]
    thrust = u.sum()
    force_w = rotation_matrix(q) @ np.array([0.0, 0.0, thrust]) - np.array([0.0, 0.0, p.mass * p.gravity])
    torque_b = p.mixer @ u
    # quat_left would renormalize and warn mid-RK4-stage; these stages are never exactly unit
    qdot = 0.5 * quat_right(H @ w) @ q
    wdot = p.J_inv @ (torque_b - hat(w) @ p.J @ w)
    return np.concatenate([v, qdot, force_w / p.mass, wdot])


def _dR_e3_dq(q: NDArray[np.float64]) -> NDArray[np.float64]:
    w, x, y, z = q
    return 2.0 * np.array([
        [y, z, w, x],
        [-x, -w, z, y],
        [w, -x, -y, z],
    ])


@dataclass(frozen=True)
class Quadrotor:
    params: QuadrotorParams = field(default_factory=QuadrotorParams)
    state_dim: int = 13
    control_dim: int = 4

    def deriv(self, x, u):
        return quadrotor_deriv(x, u, self.params)

    def jacobians(self, x, u):
        p = self.params
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        q, w = x[3:7], x[10:13]
        A = np.zeros((13, 13))
        B = np.zeros((13, 4))
        A[0:3, 7:10] = np.eye(3)
        A[3:7, 3:7] = 0.5 * quat_right(H @ w)
        A[3:7, 10:13] = 0.5 * quat_left_raw(q) @ H
        A[7:10, 3:7] = _dR_e3_dq(q) * u.sum() / p.mass
        B[7:10, :] = np.outer(rotation_matrix(q)[:, 2], np.ones(4)) / p.mass
        A[10:13, 10:13] = p.J_inv @ (hat(p.J @ w) - hat(w) @ p.J)
        B[10:13, :] = p.J_inv @ p.mixer
        return A, B

    def hover(self, position=(0.0, 0.0, 0.0)):
        x = np.zeros(13)
        x[0:3] = position
        x[3] = 1.0
        return x, np.full(4, self.params.hover_thrust)


def quat_left_raw(q: NDArray[np.float64]) -> NDArray[np.float64]:
    """``quat_left`` without the unit-norm check, for Jacobians at perturbed points."""
    qs, qv = q[0], q[1:]
    L = np.empty((4, 4))
    L[0, 0] = qs
    L[0, 1:] = -qv
    L[1:, 0] = qv
    L[1:, 1:] = qs * np.eye(3) + hat(qv)
    return L


@dataclass(frozen=True)
class DoubleIntegrator:
    """``s``-axis double integrator, state ``[p, v]``, control = acceleration."""

    dim: int = 2

    @property
    def state_dim(self) -> int:
        return 2 * self.dim

    @property
    def control_dim(self) -> int:
        return self.dim

    def deriv(self, x, u):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[self.dim:], np.asarray(u, dtype=float)])

    def jacobians(self, x, u):
        s = self.dim
        A = np.zeros((2 * s, 2 * s))
        A[:s, s:] = np.eye(s)
        B = np.zeros((2 * s, s))
        B[s:, :] = np.eye(s)
        return A, B

    def hover(self, position=None):
        x = np.zeros(2 * self.dim)
        if position is not None:
            x[:self.dim] = position
        return x, np.zeros(self.dim)


@dataclass(frozen=True)
class Unicycle:
    """Planar unicycle, state ``[x, y, theta]``, control ``[V, omega_z]``."""

    state_dim: int = 3
    control_dim: int = 2

    def deriv(self, x, u):
        _, _, th = np.asarray(x, dtype=float)
        V, wz = np.asarray(u, dtype=float)
        return np.array([V * np.cos(th), V * np.sin(th), wz])

    def jacobians(self, x, u):
        th = float(np.asarray(x)[2])
        V = float(np.asarray(u)[0])
        A = np.zeros((3, 3))
        A[0, 2] = -V * np.sin(th)
        A[1, 2] = V * np.cos(th)
        B = np.array([[np.cos(th), 0.0], [np.sin(th), 0.0], [0.0, 1.0]])
        return A, B


VehicleModel = Quadrotor | DoubleIntegrator | Unicycle


def model_deriv(model: VehicleModel, x: ArrayLike, u: ArrayLike) -> NDArray[np.float64]:
    """Dispatch to ``model.deriv`` after checking dimensions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.state_dim,) or u.shape != (model.control_dim,):
        raise ValueError(
            f"{type(model).__name__} expects x of length {model.state_dim} and u of length "
            f"{model.control_dim}, got {x.shape} and {u.shape}"
        )
    return model.deriv(x, u)
