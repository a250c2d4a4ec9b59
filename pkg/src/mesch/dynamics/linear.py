"""Linearization, attitude-error reduction and RK4-consistent discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import block_diag

from .quaternion import UNIT_TOL, attitude_jacobian

FD_STEP = 1e-6


@dataclass(frozen=True)
class LinearizedModel:
    """``A``, ``B`` about ``(x_bar, u_bar)``; continuous when ``dt`` is None."""

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    x_bar: NDArray[np.float64]
    u_bar: NDArray[np.float64]
    dt: float | None = None

    def __post_init__(self):
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(n, n)}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("linearization has non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def jacobians_fd(deriv, x: ArrayLike, u: ArrayLike, step: float = FD_STEP):
    """Central finite-difference Jacobians of ``deriv`` at ``(x, u)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f0 = np.asarray(deriv(x, u))
    A = np.empty((f0.size, x.size))
    B = np.empty((f0.size, u.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = step
        A[:, i] = (deriv(x + dx, u) - deriv(x - dx, u)) / (2 * step)
    for i in range(u.size):
        du = np.zeros_like(u)
        du[i] = step
        B[:, i] = (deriv(x, u + du) - deriv(x, u - du)) / (2 * step)
    return A, B


def linearize(model_or_deriv, x_bar: ArrayLike, u_bar: ArrayLike, step: float = FD_STEP) -> LinearizedModel:
    """Continuous-time linearization.

    Models exposing ``jacobians`` use the analytic path; bare derivative
    callables fall back to central differences.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    if hasattr(model_or_deriv, "jacobians"):
        A, B = model_or_deriv.jacobians(x_bar, u_bar)
    else:
        A, B = jacobians_fd(model_or_deriv, x_bar, u_bar, step)
    return LinearizedModel(A, B, x_bar.copy(), u_bar.copy())


def error_state_map(q_bar: ArrayLike) -> NDArray[np.float64]:
    """13x12 map ``E(q)`` from the reduced error state to the full state."""
    q_bar = np.asarray(q_bar, dtype=float)
    if abs(np.linalg.norm(q_bar) - 1.0) > UNIT_TOL:
        raise ValueError("reference quaternion must be unit norm")
    return block_diag(np.eye(3), attitude_jacobian(q_bar), np.eye(3), np.eye(3))


def reduce_attitude(lin: LinearizedModel, q_bar: ArrayLike | None = None) -> LinearizedModel:
    """Replace the 4-parameter quaternion block with a 3-parameter attitude error.

    Returns the 12-state model ``(E^T A E, E^T B)``.
    """
    if lin.n != 13:
        raise ValueError("attitude reduction needs the 13-state quadrotor model")
    if q_bar is None:
        q_bar = lin.x_bar[3:7]
    E = error_state_map(q_bar)
    return LinearizedModel(E.T @ lin.A @ E, E.T @ lin.B, lin.x_bar, lin.u_bar, lin.dt)


def discretize(lin: LinearizedModel, dt: float) -> LinearizedModel:
    """Discrete model matching one RK4 step of the linear ODE under ZOH control.

    For ``dx = A x + B u`` the RK4 step is exactly
    ``x+ = (I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24) x + h (I + hA/2 + (hA)^2/6 + (hA)^3/24) B u``.
    """
    if lin.dt is not None:
        raise ValueError("model is already discrete")
    n = lin.n
    hA = dt * lin.A
    I = np.eye(n)
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    Ad = I + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    Bd = dt * (I + hA / 2 + hA2 / 6 + hA3 / 24) @ lin.B
    return LinearizedModel(Ad, Bd, lin.x_bar, lin.u_bar, dt)


def controllability_matrix(A: NDArray[np.float64], B: NDArray[np.float64]) -> NDArray[np.float64]:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def controllability_rank(A, B, tol: float | None = None) -> int:
    return int(np.linalg.matrix_rank(controllability_matrix(A, B), tol=tol))
