"""Ergodic coverage planning by projection-based trajectory optimization.

The ergodic metric compares the time-averaged spatial statistics of a
trajectory with a target density in a truncated cosine basis on a
rectangular domain ``[0, L_1] x ... x [0, L_s]``::

    F_k(x) = prod_i cos(k_i pi x_i / L_i) / h_k
    Phi    = sum_k Lambda_k (c_k - phi_k)^2,   Lambda_k = (1 + |k|^2)^(-(s+1)/2)

``h_k`` normalizes each basis function to unit mean square over the domain,
so a normalized density always has ``phi_0 = 1``.

Optimization follows the usual PTO loop: gradients, an LQ descent direction
on the Euler-discretized perturbation dynamics, an Armijo step, and a
feedback projection back onto the dynamics.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .dynamics import DoubleIntegrator
from .dynamics.linear import jacobians_fd
from .lq import AffinePolicy, resolve_feedforward, rollout_linear, solve_lq

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
_NO_BATTERY = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CoverageDomain:
    lengths: tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(L) for L in self.lengths)
        if not lengths or any(L <= 0 for L in lengths):
            raise ValueError(f"domain lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def dim(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class SpectralDensity:
    """Target density coefficients ``phi_k`` on a ``K^s`` multi-index grid."""

    domain: CoverageDomain
    phi: NDArray[np.float64]

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    def weights(self) -> NDArray[np.float64]:
        return sobolev_weights(self.domain.dim, self.K)


@dataclass(frozen=True)
class DiscreteTrajectory:
    states: NDArray[np.float64]    # (N, n)
    controls: NDArray[np.float64]  # (N - 1, m)
    dt: float
    feasible: bool = False

    def __post_init__(self):
        if len(self.controls) != len(self.states) - 1:
            raise ValueError(f"{len(self.states)} states need {len(self.states) - 1} controls, got {len(self.controls)}")

    @property
    def N(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class DescentDirection:
    z: NDArray[np.float64]  # (N, n), z[0] = 0
    v: NDArray[np.float64]  # (N - 1, m)


@dataclass(frozen=True)
class PTOParams:
    T_H: float = 30.0
    dt: float = 0.2
    q: float = 1000.0
    c_b: float = 100.0
    R: NDArray[np.float64] | float = 1.0
    Q_D: NDArray[np.float64] | float = 1.0
    R_D: NDArray[np.float64] | float = 1.0
    max_iters: int = 50
    tol: float = 1e-6
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 40

    @property
    def N(self) -> int:
        return int(round(self.T_H / self.dt)) + 1


@dataclass(frozen=True)
class PTOResult:
    trajectory: DiscreteTrajectory
    objectives: list[float] = field(default_factory=list)
    status: str = "converged"  # "converged" | "max_iters" | "stalled"

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1


# --- basis -----------------------------------------------------------------

def _normalizers(s: int, K: int) -> NDArray[np.float64]:
    per_dim = np.where(np.arange(K) == 0, 1.0, 1.0 / np.sqrt(2.0))
    h = per_dim
    for _ in range(s - 1):
        h = np.multiply.outer(h, per_dim)
    return h


def sobolev_weights(s: int, K: int) -> NDArray[np.float64]:
    ks = np.indices((K,) * s)
    return (1.0 + np.sum(ks**2, axis=0)) ** (-(s + 1) / 2.0)


def _outer_rows(factors: Sequence[NDArray[np.float64]]) -> NDArray[np.float64]:
    """Row-wise outer product of ``(N, K)`` factors -> ``(N, K, ..., K)``."""
    out = factors[0]
    for f in factors[1:]:
        out = out[..., None] * f.reshape((f.shape[0],) + (1,) * (out.ndim - 1) + (f.shape[1],))
    return out


def _cos_sin(positions: NDArray[np.float64], domain: CoverageDomain, K: int):
    L = np.asarray(domain.lengths)
    omega = np.arange(K)[None, :] * np.pi / L[:, None]  # (s, K)
    arg = positions[:, :, None] * omega[None]           # (N, s, K)
    return np.cos(arg), np.sin(arg), omega


def basis(positions: ArrayLike, domain: CoverageDomain, K: int) -> NDArray[np.float64]:
    """``F_k`` evaluated at each row of ``positions``; shape ``(N,) + (K,) * s``."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    C, _, _ = _cos_sin(positions, domain, K)
    return _outer_rows([C[:, i] for i in range(domain.dim)]) / _normalizers(domain.dim, K)


def trajectory_coefficients(positions: ArrayLike, domain: CoverageDomain, K: int) -> NDArray[np.float64]:
    """Time-averaged coefficients ``c_k`` of a sampled path."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if domain.dim == 2:
        # the mean of row-wise outer products is a single matrix product
        C, _, _ = _cos_sin(positions, domain, K)
        return (C[:, 0].T @ C[:, 1]) / (len(positions) * _normalizers(2, K))
    return basis(positions, domain, K).mean(axis=0)


def uniform_density(domain: CoverageDomain, K: int = 10) -> SpectralDensity:
    phi = np.zeros((K,) * domain.dim)
    phi[(0,) * domain.dim] = 1.0
    return SpectralDensity(domain, phi)


def gaussian_mixture_density(domain: CoverageDomain, means, covs, weights, K: int = 10, grid: int = 100) -> SpectralDensity:
    """Coefficients of a Gaussian mixture restricted to the domain.

    Computed by midpoint quadrature on ``grid`` cells per axis; the density
    is renormalized on the domain so ``phi_0 = 1``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(len(means), domain.dim, domain.dim)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("mixture weights must be non-negative with positive sum")
    axes = [(np.arange(grid) + 0.5) * L / grid for L in domain.lengths]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    p = np.zeros(len(pts))
    for mu, S, w in zip(means, covs, weights):
        d = pts - mu
        Sinv = np.linalg.inv(S)
        p += w * np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, Sinv, d)) / np.sqrt(np.linalg.det(2 * np.pi * S))
    p /= p.sum()
    phi = np.tensordot(p, basis(pts, domain, K), axes=1)
    return SpectralDensity(domain, phi)


# --- objective -------------------------------------------------------------

def _positions(traj: DiscreteTrajectory, domain: CoverageDomain) -> NDArray[np.float64]:
    return traj.states[:, :domain.dim]


def ergodic_metric(traj: DiscreteTrajectory, density: SpectralDensity) -> float:
    c = trajectory_coefficients(_positions(traj, density.domain), density.domain, density.K)
    return float(np.sum(density.weights() * (c - density.phi) ** 2))


def ergodic_metric_gradient(traj: DiscreteTrajectory, density: SpectralDensity) -> NDArray[np.float64]:
    """``dPhi/dx_n`` for the spatial components of every state; shape ``(N, s)``."""
    dom = density.domain
    s, K = dom.dim, density.K
    pos = _positions(traj, dom)
    C, S, omega = _cos_sin(pos, dom, K)
    h = _normalizers(s, K)
    if s == 2:
        c = (C[:, 0].T @ C[:, 1]) / (len(pos) * h)
    else:
        c = (_outer_rows([C[:, i] for i in range(s)]) / h).mean(axis=0)
    coef = 2.0 * density.weights() * (c - density.phi) / (len(pos) * h)
    grad = np.empty_like(pos)
    if s == 2:
        grad[:, 0] = np.sum(-S[:, 0] * omega[0] * (C[:, 1] @ coef.T), axis=1)
        grad[:, 1] = np.sum(-S[:, 1] * omega[1] * (C[:, 0] @ coef), axis=1)
        return grad
    for i in range(s):
        factors = [C[:, j] for j in range(s)]
        factors[i] = -S[:, i] * omega[i]
        G = _outer_rows(factors)
        grad[:, i] = np.tensordot(G, coef, axes=s)
    return grad


def boundary_penalty(traj: DiscreteTrajectory, domain: CoverageDomain, c_b: float):
    """Quadratic penalty on spatial coordinates leaving the domain.

    Returns:
        ``(J_b, grad)`` with ``grad`` shaped like the spatial block ``(N, s)``.
    """
    if c_b <= 0:
        raise ValueError("c_b must be positive")
    pos = _positions(traj, domain)
    over = np.maximum(pos - np.asarray(domain.lengths), 0.0) + np.minimum(pos, 0.0)
    return float(c_b * np.sum(over**2)), 2.0 * c_b * over


def _as_matrix(M, n: int) -> NDArray[np.float64]:
    M = np.asarray(M, dtype=float)
    return M * np.eye(n) if M.ndim == 0 else M


def control_cost(traj: DiscreteTrajectory, R) -> float:
    R = _as_matrix(R, traj.controls.shape[1])
    return float(0.5 * traj.dt * np.einsum("ni,ij,nj->", traj.controls, R, traj.controls))


def objective(traj: DiscreteTrajectory, density: SpectralDensity, q: float, c_b: float, R) -> float:
    return q * ergodic_metric(traj, density) + boundary_penalty(traj, density.domain, c_b)[0] + control_cost(traj, R)


def objective_gradients(traj: DiscreteTrajectory, density: SpectralDensity, q: float, c_b: float, R):
    """Exact gradients of ``objective`` w.r.t. each state and control.

    Returns:
        ``(a, b)`` with ``a`` shaped ``(N, n)`` and ``b`` shaped ``(N - 1, m)``.
    """
    s = density.domain.dim
    a = np.zeros_like(traj.states)
    a[:, :s] = q * ergodic_metric_gradient(traj, density) + boundary_penalty(traj, density.domain, c_b)[1]
    b = traj.dt * traj.controls @ _as_matrix(R, traj.controls.shape[1]).T
    return a, b


# --- PTO machinery -----------------------------------------------------------

def perturbation_matrices(traj: DiscreteTrajectory, model):
    """Euler perturbation dynamics ``A~_n = I + dt A_n``, ``B~_n = dt B_n`` along the trajectory."""
    if traj.N < 2:
        raise ValueError("trajectory needs at least two states")
    n = traj.states.shape[1]
    At, Bt = [], []
    for x, u in zip(traj.states[:-1], traj.controls):
        if hasattr(model, "jacobians"):
            A, B = model.jacobians(x, u)
        else:
            A, B = jacobians_fd(model.deriv if hasattr(model, "deriv") else model, x, u)
        At.append(np.eye(n) + traj.dt * A)
        Bt.append(traj.dt * B)
    return np.array(At), np.array(Bt)


def descent_direction(a, b, At, Bt, Q_D, R_D, factor: AffinePolicy | None = None) -> DescentDirection:
    """Minimize ``sum a_n'z_n + b_n'v_n + z_n'Q_D z_n + v_n'R_D v_n`` on the perturbation dynamics, ``z_1 = 0``.

    Args:
        factor: output of ``descent_factor`` for the same ``(At, Bt, Q_D, R_D)``;
            lets repeated solves with fixed perturbation dynamics skip the
            Riccati pass.
    """
    N = len(a)
    n, m = a.shape[1], b.shape[1]
    if factor is None:
        Q_D, R_D = _as_matrix(Q_D, n), _as_matrix(R_D, m)
        pol = solve_lq(At, Bt, 2 * Q_D, 2 * R_D, 2 * Q_D, N - 1, q=a[:-1], r=b, qN=a[-1])
    else:
        pol = resolve_feedforward(factor, At, Bt, a[:-1], b, a[-1])
    z, v = rollout_linear(At, Bt, pol, np.zeros(n))
    return DescentDirection(z, v)


def descent_factor(At, Bt, Q_D, R_D) -> AffinePolicy:
    n, m = Bt.shape[1], Bt.shape[2]
    return solve_lq(At, Bt, 2 * _as_matrix(Q_D, n), 2 * _as_matrix(R_D, m), 2 * _as_matrix(Q_D, n), len(At))


def projection_gains(At, Bt, Q_D, R_D) -> NDArray[np.float64]:
    """Time-varying LQR gains ``K_n`` used in ``u_n = mu_n + K_n (alpha_n - x_n)``."""
    N = len(At)
    n, m = Bt.shape[1], Bt.shape[2]
    Q_D, R_D = _as_matrix(Q_D, n), _as_matrix(R_D, m)
    return -solve_lq(At, Bt, Q_D, R_D, Q_D, N).K


def project(alpha, mu, x_ic, model, K, dt: float) -> DiscreteTrajectory:
    """Feedback projection of a candidate ``(alpha, mu)`` onto the Euler-discretized dynamics."""
    alpha = np.ascontiguousarray(alpha, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)
    if isinstance(model, DoubleIntegrator):
        A, B = model.jacobians(alpha[0], mu[0])
        Ad = np.eye(len(A)) + dt * A
        Bd = dt * B
        xs, us, _ = _kernels.rollout_lti(np.asarray(x_ic, dtype=float), 0.0, alpha[:-1], mu,
                                         -np.ascontiguousarray(K), Ad, Bd, dt, _NO_BATTERY)
        return DiscreteTrajectory(xs, us, dt, feasible=True)
    xs = np.empty_like(alpha)
    us = np.empty_like(mu)
    xs[0] = x_ic
    for k in range(len(mu)):
        us[k] = mu[k] + K[k] @ (alpha[k] - xs[k])
        xs[k + 1] = xs[k] + model.deriv(xs[k], us[k]) * dt
    return DiscreteTrajectory(xs, us, dt, feasible=True)


def dynamics_residual(traj: DiscreteTrajectory, model) -> float:
    f = np.array([model.deriv(x, u) for x, u in zip(traj.states[:-1], traj.controls)])
    res = traj.states[1:] - traj.states[:-1] - f * traj.dt
    return float(np.max(np.abs(res), initial=0.0))


def stationary_trajectory(x_ic, N: int, m: int, dt: float) -> DiscreteTrajectory:
    x_ic = np.asarray(x_ic, dtype=float)
    return DiscreteTrajectory(np.tile(x_ic, (N, 1)), np.zeros((N - 1, m)), dt, feasible=True)


def pto_optimize(x_ic, density: SpectralDensity, params: PTOParams = PTOParams(), model=None,
                 initial: DiscreteTrajectory | None = None) -> PTOResult:
    """Projection-based trajectory optimization of the ergodic objective.

    Args:
        x_ic: fixed initial state; its spatial part must lie in the domain.
        model: dynamics with ``deriv``/``jacobians``; defaults to a double
            integrator of the domain's dimension.
        initial: starting trajectory; defaults to holding ``x_ic`` with zero
            control. It is projected before the first iteration.

    Returns:
        PTOResult with the final feasible trajectory and the objective of
        every accepted iterate.
    """
    dom = density.domain
    model = model or DoubleIntegrator(dom.dim)
    x_ic = np.asarray(x_ic, dtype=float)
    pos = x_ic[:dom.dim]
    if np.any(pos < 0) or np.any(pos > np.asarray(dom.lengths)):
        raise ValueError(f"initial position {pos} outside the coverage domain")
    N, dt = params.N, params.dt
    if initial is None:
        initial = stationary_trajectory(x_ic, N, model.control_dim, dt)

    def cost(t):
        return objective(t, density, params.q, params.c_b, params.R)

    linear = isinstance(model, DoubleIntegrator)
    At, Bt = perturbation_matrices(initial, model)
    if linear and np.ndim(params.Q_D) == 0 and np.ndim(params.R_D) == 0:
        # the perturbation dynamics never change, so gains depend only on the grid
        K, factor = _linear_factors(model.dim, N, dt, float(params.Q_D), float(params.R_D))
    else:
        K = projection_gains(At, Bt, params.Q_D, params.R_D)
        factor = descent_factor(At, Bt, params.Q_D, params.R_D) if linear else None
    traj = project(initial.states, initial.controls, x_ic, model, K, dt)
    J = cost(traj)
    history = [J]
    status = "max_iters"
    for _ in range(params.max_iters):
        if not linear:
            At, Bt = perturbation_matrices(traj, model)
            K = projection_gains(At, Bt, params.Q_D, params.R_D)
        a, b = objective_gradients(traj, density, params.q, params.c_b, params.R)
        zeta = descent_direction(a, b, At, Bt, params.Q_D, params.R_D, factor)
        slope = float(np.sum(a * zeta.z) + np.sum(b * zeta.v))
        if slope >= 0:
            status = "converged"
            break
        gamma = 1.0
        for _ in range(params.max_backtracks):
            cand = project(traj.states + gamma * zeta.z, traj.controls + gamma * zeta.v, x_ic, model, K, dt)
            J_new = cost(cand)
            if J_new <= J + params.armijo_c * gamma * slope:
                break
            gamma *= params.armijo_shrink
        else:
            log.debug("Armijo backtracking exhausted after %d steps", params.max_backtracks)
            status = "stalled"
            break
        traj, dJ, J = cand, J - J_new, J_new
        history.append(J)
        if abs(dJ) < params.tol:
            status = "converged"
            break
    return PTOResult(traj, history, status)


@lru_cache(maxsize=16)
def _linear_factors(dim: int, N: int, dt: float, Q_D: float, R_D: float):
    model = DoubleIntegrator(dim)
    At, Bt = perturbation_matrices(stationary_trajectory(np.zeros(2 * dim), N, dim, dt), model)
    return projection_gains(At, Bt, Q_D, R_D), descent_factor(At, Bt, Q_D, R_D)


def shift_plan(traj: DiscreteTrajectory, steps: int) -> DiscreteTrajectory:
    """Drop the first ``steps`` samples, e.g. to warm-start a replanning call."""
    return replace(traj, states=traj.states[steps:], controls=traj.controls[steps:])

