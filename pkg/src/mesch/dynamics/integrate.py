"""Fixed-step RK4 with zero-order-hold control."""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .models import Quadrotor, VehicleModel

Deriv = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]

QUAT_SLICE = slice(3, 7)


class IntegrationError(FloatingPointError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t = {t:.6g} s)")
        self.t = t


def rk4_step(
    deriv: Deriv,
    x: ArrayLike,
    u: ArrayLike,
    dt: float,
    *,
    quat: slice | None = None,
    t: float | None = None,
) -> NDArray[np.float64]:
    """One classic RK4 step of ``dx/dt = deriv(x, u)`` holding ``u`` constant.

    Args:
        quat: slice of ``x`` holding a quaternion to renormalize after the step.
        t: time stamp reported if the derivative turns non-finite.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = deriv(x, u)
    k2 = deriv(x + 0.5 * dt * k1, u)
    k3 = deriv(x + 0.5 * dt * k2, u)
    k4 = deriv(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("non-finite state derivative", t)
    if quat is not None:
        x_next[quat] /= np.linalg.norm(x_next[quat])
    return x_next


def step_model(model: VehicleModel, x: ArrayLike, u: ArrayLike, dt: float, t: float | None = None):
    quat = QUAT_SLICE if isinstance(model, Quadrotor) else None
    return rk4_step(model.deriv, x, u, dt, quat=quat, t=t)


def rollout(model: VehicleModel, x0: ArrayLike, controls: ArrayLike, dt: float) -> NDArray[np.float64]:
    """Open-loop RK4 rollout; returns ``len(controls) + 1`` states."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    xs = np.empty((len(controls) + 1, model.state_dim))
    xs[0] = x0
    for k, u in enumerate(controls):
        xs[k + 1] = step_model(model, xs[k], u, dt, t=k * dt)
    return xs
