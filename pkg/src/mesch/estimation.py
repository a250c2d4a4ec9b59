"""EKF for the mobile charging station and rendezvous-point placement.

Charger states are laid out as ``[x, y, z, ...]`` so that index 2 is always
altitude; planar ground vehicles carry a constant ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .dynamics import ConfigurationError, rk4_step
from .dynamics.linear import jacobians_fd

Z_95 = 1.96
SYM_TOL = 1e-10
PSD_TOL = 1e-10


class CovarianceError(np.linalg.LinAlgError):
    pass


def _check_cov(S: NDArray[np.float64], where: str) -> None:
    scale = max(1.0, float(np.max(np.abs(S))) if S.size else 1.0)
    if np.max(np.abs(S - S.T), initial=0.0) > SYM_TOL * scale:
        raise CovarianceError(f"{where}: covariance not symmetric")
    lam = np.linalg.eigvalsh(S)[0] if S.size else 0.0
    if lam < -PSD_TOL * scale:
        raise CovarianceError(f"{where}: covariance lost PSD (min eigenvalue {lam:.3e})")


@dataclass(frozen=True)
class GaussianBelief:
    mean: NDArray[np.float64]
    cov: NDArray[np.float64]
    stamp: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        _check_cov(cov, "belief")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _as_cov_fn(M) -> Callable[[float], NDArray[np.float64]]:
    if callable(M):
        return M
    M = np.asarray(M, dtype=float)
    return lambda t: M


@dataclass(frozen=True)
class NoiseModel:
    """Process covariance ``W(t)`` and measurement covariance ``V(t)``.

    Either argument may be a constant matrix or a callable of time.
    """

    W: object
    V: object

    def process(self, t: float) -> NDArray[np.float64]:
        return _as_cov_fn(self.W)(t)

    def measurement(self, t: float) -> NDArray[np.float64]:
        return _as_cov_fn(self.V)(t)


@dataclass(frozen=True)
class RendezvousPoint:
    x_rp: NDArray[np.float64]
    d: float
    valid_at: float


class ChargerModel(Protocol):
    state_dim: int

    def deriv(self, x, u) -> NDArray[np.float64]: ...


@dataclass(frozen=True)
class PlanarUnicycleCharger:
    """Ground unicycle on ``[x, y, z, theta]`` with ``z`` held constant; control ``[V, omega_z]``."""

    state_dim: int = 4
    control_dim: int = 2

    def deriv(self, x, u):
        th = x[3]
        V, wz = u
        return np.array([V * np.cos(th), V * np.sin(th), 0.0, wz])

    def jacobians(self, x, u):
        th = float(x[3])
        V = float(u[0])
        A = np.zeros((4, 4))
        A[0, 3] = -V * np.sin(th)
        A[1, 3] = V * np.cos(th)
        B = np.zeros((4, 2))
        B[0, 0] = np.cos(th)
        B[1, 0] = np.sin(th)
        B[3, 1] = 1.0
        return A, B


@dataclass(frozen=True)
class LinearCharger:
    """``dx/dt = A x + B u``; used for calibration studies and static stations."""

    A: NDArray[np.float64]
    B: NDArray[np.float64] | None = None

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def deriv(self, x, u):
        dx = self.A @ x
        if self.B is not None:
            dx = dx + self.B @ u
        return dx

    def jacobians(self, x, u):
        B = np.zeros((self.state_dim, np.size(u))) if self.B is None else self.B
        return self.A, B


def static_charger(dim: int = 4) -> LinearCharger:
    return LinearCharger(np.zeros((dim, dim)))


@dataclass(frozen=True)
class Observation:
    """Measurement map ``y = z(x)`` with Jacobian."""

    select: NDArray[np.float64] = field(repr=False)

    def __call__(self, x):
        return self.select @ x

    def jacobian(self, x):
        return self.select


def identity_observation(dim: int) -> Observation:
    return Observation(np.eye(dim))


def position_observation(dim: int) -> Observation:
    """Observe ``[x, y, z]`` only."""
    if dim < 3:
        raise ConfigurationError("position observation needs at least 3 state components")
    return Observation(np.eye(dim)[:3])


def _state_jacobian(model, x, u):
    if hasattr(model, "jacobians"):
        return model.jacobians(x, u)[0]
    return jacobians_fd(model.deriv, x, u)[0]


def _predict_arrays(mean, cov, model, u, W, dt: float, t: float):
    if isinstance(model, PlanarUnicycleCharger):
        return _kernels.unicycle_predict(mean, np.ascontiguousarray(cov), u, np.ascontiguousarray(W, dtype=float), dt, 1)
    F = np.eye(mean.size) + dt * _state_jacobian(model, mean, u)
    m = rk4_step(model.deriv, mean, u, dt, t=t)
    S = F @ cov @ F.T + W * dt
    return m, 0.5 * (S + S.T)


def ekf_predict(b: GaussianBelief, model, u: ArrayLike, noise: NoiseModel, dt: float) -> GaussianBelief:
    """One EKF time update.

    The mean is advanced by RK4; the covariance by ``F S F' + W dt`` with the
    first-order transition ``F = I + dt * df/dx`` evaluated at the prior mean.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mean, cov = _predict_arrays(b.mean, b.cov, model, np.asarray(u, dtype=float), noise.process(b.stamp), dt, b.stamp)
    return GaussianBelief(mean, cov, b.stamp + dt)


def ekf_update(b: GaussianBelief, y: ArrayLike, obs: Observation, V: ArrayLike) -> GaussianBelief:
    """EKF measurement update with the Joseph-form covariance."""
    V = np.asarray(V, dtype=float)
    Hm = obs.jacobian(b.mean)
    S = Hm @ b.cov @ Hm.T + V
    try:
        # K = P H' S^-1 via a solve on the symmetric S
        K = np.linalg.solve(S, Hm @ b.cov).T
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("innovation covariance is singular") from exc
    innov = np.asarray(y, dtype=float) - obs(b.mean)
    mean = b.mean + K @ innov
    IKH = np.eye(b.mean.size) - K @ Hm
    P = IKH @ b.cov @ IKH.T + K @ V @ K.T
    return GaussianBelief(mean, 0.5 * (P + P.T), b.stamp)


def propagate_horizon(b: GaussianBelief, model, controls, T_R: float, dt: float, noise: NoiseModel) -> GaussianBelief:
    """Chain ``ekf_predict`` over ``T_R / dt`` steps.

    Args:
        controls: callable ``t -> u`` giving the charger's nominal control, or a
            constant control vector held for the whole horizon.
    """
    if T_R <= 0:
        raise ValueError("T_R must be positive")
    steps = int(round(T_R / dt))
    if abs(steps * dt - T_R) > 1e-9 * max(1.0, T_R):
        raise ValueError(f"dt = {dt} does not divide T_R = {T_R}")
    control_at = controls if callable(controls) else (lambda t, u=np.asarray(controls, dtype=float): u)
    t0 = b.stamp
    mean, cov = b.mean, b.cov
    if isinstance(model, PlanarUnicycleCharger) and not callable(controls) and not callable(noise.W):
        mean, cov = _kernels.unicycle_predict(mean, np.ascontiguousarray(cov), np.asarray(control_at(t0), dtype=float),
                                              np.ascontiguousarray(noise.process(t0), dtype=float), dt, steps)
        return GaussianBelief(mean, cov, t0 + T_R)
    # validated once at the end; each step preserves symmetry and PSD by construction
    for k in range(steps):
        t = t0 + k * dt
        mean, cov = _predict_arrays(mean, cov, model, np.asarray(control_at(t), dtype=float), noise.process(t), dt, t)
    return GaussianBelief(mean, cov, t0 + T_R)


def worst_case_state(b: GaussianBelief) -> NDArray[np.float64]:
    """Per-axis upper 95% bound ``mean + 1.96 sqrt(diag(S))``."""
    d = np.diag(b.cov).copy()
    if np.any(d < -PSD_TOL):
        raise CovarianceError(f"negative variance {d.min():.3e} on the covariance diagonal")
    return b.mean + Z_95 * np.sqrt(np.clip(d, 0.0, None))


def rendezvous_point(b: GaussianBelief, d: float) -> RendezvousPoint:
    """Hover point ``d`` meters above the predicted charger position."""
    if not d > 0:
        raise ValueError(f"rendezvous offset d must be positive, got {d}")
    if b.mean.size < 3:
        raise ConfigurationError("charger state needs a z coordinate at index 2")
    x = b.mean.copy()
    x[2] += d
    return RendezvousPoint(x, float(d), b.stamp)
