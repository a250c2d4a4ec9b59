"""Nominal tracking, back-to-base, candidate and landing trajectories.

All trajectories are produced the same way: an LQ problem is solved on the
vehicle's linear hover model, and the resulting affine policy is rolled out
through the full nonlinear dynamics (RK4) with the SoC co-integrated. For
quadrotors the linear model is the 12-state attitude-error reduction.

Controls are always expressed as ``u_k = uff_k + K_k @ err(x_k, xref_k)``
so one compiled rollout kernel serves every trajectory type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .dynamics import (
    BatteryModel,
    ConstantRate,
    DoubleIntegrator,
    Quadrotor,
    QuadrotorParams,
    discretize,
    linearize,
    reduce_attitude,
)
from .dynamics.quaternion import attitude_error
from .lq import AffinePolicy, resolve_feedforward, solve_lq, stationary_gain

TERMINAL_WEIGHT = 1e6
TERMINAL_TOL = 1e-3
TARGET_SHIFT_ITERS = 6


class TerminalMissError(RuntimeError):
    """A terminally constrained trajectory did not reach its target."""

    def __init__(self, miss: float):
        super().__init__(f"terminal miss {miss:.3e} m exceeds {TERMINAL_TOL:.0e} m")
        self.miss = miss


@dataclass(frozen=True)
class TrackingWeights:
    Q: NDArray[np.float64]
    R: NDArray[np.float64]
    Q_f: NDArray[np.float64] | None = None

    def __post_init__(self):
        for name in ("Q", "R"):
            M = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, M)
        if np.linalg.eigvalsh(self.Q)[0] < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R)[0] <= 0:
            raise ValueError("R must be positive definite")
        if self.Q_f is None:
            object.__setattr__(self, "Q_f", self.Q)

    @classmethod
    def quadrotor_default(cls) -> "TrackingWeights":
        # reduced error order: position, attitude, velocity, body rate
        return cls(np.diag([10.0] * 3 + [1.0] * 3 + [1.0] * 3 + [0.1] * 3), 0.1 * np.eye(4))

    @classmethod
    def double_integrator_default(cls, dim: int = 3) -> "TrackingWeights":
        return cls(np.diag([10.0] * dim + [1.0] * dim), 0.1 * np.eye(dim))

    @classmethod
    def quadrotor_transfer(cls) -> "TrackingWeights":
        """Weights for terminally constrained transfers (b2b, landing).

        No running position cost, so the transfer is spread over the whole
        horizon and stays in the near-hover regime of the linear model.
        """
        return cls(np.diag([0.0] * 3 + [1.0] * 3 + [0.1] * 6), np.eye(4))

    @classmethod
    def double_integrator_transfer(cls, dim: int = 3) -> "TrackingWeights":
        return cls(np.diag([0.0] * dim + [0.1] * dim), np.eye(dim))


# --- plants -------------------------------------------------------------------

class QuadrotorPlant:
    """Quadrotor with its reduced, discretized hover model at a fixed tracking step."""

    def __init__(self, params: QuadrotorParams | None = None, dt: float = 0.05):
        self.model = Quadrotor(params or QuadrotorParams())
        self.dt = dt
        x_bar, u_bar = self.model.hover()
        lin = discretize(reduce_attitude(linearize(self.model, x_bar, u_bar)), dt)
        self.Ad, self.Bd = lin.A, lin.B
        self.u_bar = u_bar
        self._P = self.model.params.kernel_params()

    state_dim = 13
    err_dim = 12
    control_dim = 4

    def hover_state(self, position: ArrayLike, velocity: ArrayLike | None = None) -> NDArray[np.float64]:
        x = np.zeros(13)
        x[:3] = position
        x[3] = 1.0
        if velocity is not None:
            x[7:10] = velocity
        return x

    def reference(self, positions, velocities, accelerations=None):
        """Level-attitude reference states and hover-thrust controls along a point-mass path."""
        N = len(positions)
        xs = np.zeros((N, 13))
        xs[:, :3] = positions
        xs[:, 3] = 1.0
        xs[:, 7:10] = velocities
        return xs, np.tile(self.u_bar, (max(N - 1, 0), 1))

    def reduced(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Hover-relative reduced coordinates ``[r, vec(q), v, w]``."""
        return np.concatenate([x[:3], x[4:7], x[7:13]])

    def error(self, x, xref) -> NDArray[np.float64]:
        return np.concatenate([x[:3] - xref[:3], attitude_error(x[3:7], xref[3:7]), x[7:] - xref[7:]])

    def position(self, x) -> NDArray[np.float64]:
        return x[..., :3]

    def rollout(self, x0, e0, xref, uff, K, battery: BatteryModel):
        return _kernels.rollout_quad(
            np.ascontiguousarray(x0, dtype=float), float(e0), np.ascontiguousarray(xref), np.ascontiguousarray(uff),
            np.ascontiguousarray(K), self.dt, self._P, battery.kernel_params(),
        )

    def step(self, x, u):
        return _kernels.quad_rk4(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(u, dtype=float), self.dt, self._P)


class DoubleIntegratorPlant:
    """Point-mass robot ``[p, v]`` with acceleration control; its linear model is exact."""

    def __init__(self, dim: int = 3, dt: float = 0.05):
        self.model = DoubleIntegrator(dim)
        self.dim = dim
        self.dt = dt
        x_bar, u_bar = self.model.hover()
        lin = discretize(linearize(self.model, x_bar, u_bar), dt)
        self.Ad, self.Bd = lin.A, lin.B
        self.u_bar = u_bar
        self.state_dim = self.err_dim = 2 * dim
        self.control_dim = dim

    def hover_state(self, position, velocity=None):
        x = np.zeros(2 * self.dim)
        x[:self.dim] = position
        if velocity is not None:
            x[self.dim:] = velocity
        return x

    def reference(self, positions, velocities, accelerations=None):
        N = len(positions)
        xs = np.hstack([positions, velocities])
        us = np.zeros((max(N - 1, 0), self.dim)) if accelerations is None else np.asarray(accelerations)[:N - 1]
        return xs, us

    def reduced(self, x):
        return np.asarray(x, dtype=float)

    def error(self, x, xref):
        return np.asarray(x) - np.asarray(xref)

    def position(self, x):
        return x[..., :self.dim]

    def rollout(self, x0, e0, xref, uff, K, battery: BatteryModel):
        return _kernels.rollout_lti(
            np.ascontiguousarray(x0, dtype=float), float(e0), np.ascontiguousarray(xref), np.ascontiguousarray(uff),
            np.ascontiguousarray(K), self.Ad, self.Bd, self.dt, battery.kernel_params(),
        )

    def step(self, x, u):
        return self.Ad @ x + self.Bd @ u


Plant = QuadrotorPlant | DoubleIntegratorPlant


@dataclass
class TrajectoryGenerator:
    """Per-plant cache of Riccati factorizations for the fixed tracking horizons.

    The hover model is time-invariant, so gain sequences depend only on the
    horizon length and weights; they are computed once and shared by every
    robot using the same plant and weights.
    """

    plant: Plant
    weights: TrackingWeights
    transfer_weights: TrackingWeights
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def for_plant(cls, plant: Plant) -> "TrajectoryGenerator":
        if isinstance(plant, QuadrotorPlant):
            return cls(plant, TrackingWeights.quadrotor_default(), TrackingWeights.quadrotor_transfer())
        return cls(plant, TrackingWeights.double_integrator_default(plant.dim),
                   TrackingWeights.double_integrator_transfer(plant.dim))

    def tracking_factor(self, N: int) -> AffinePolicy:
        key = ("track", N)
        if key not in self._cache:
            w = self.weights
            self._cache[key] = solve_lq(self.plant.Ad, self.plant.Bd, 2 * w.Q, 2 * w.R, 2 * w.Q_f, N)
        return self._cache[key]

    def terminal_gains(self, N: int) -> NDArray[np.float64]:
        key = ("terminal", N)
        if key not in self._cache:
            w = self.transfer_weights
            QN = TERMINAL_WEIGHT * np.eye(self.plant.err_dim)
            self._cache[key] = solve_lq(self.plant.Ad, self.plant.Bd, 2 * w.Q, 2 * w.R, 2 * QN, N).K
        return self._cache[key]

    @cached_property
    def tracking_gain(self) -> NDArray[np.float64]:
        """Stationary gain of the tracking policy ``u = u_ref + K err(x, x_ref)``."""
        return stationary_gain(self.plant.Ad, self.plant.Bd, self.weights.Q, self.weights.R)

    # -- trajectories -----------------------------------------------------------

    def lq_track(self, ref_states, ref_controls, x_start, e_start: float, battery: BatteryModel):
        """Finite-horizon LQ tracking of a reference, rolled out on the nonlinear model.

        Args:
            ref_states: ``(N + 1, n)`` reference states; the first row is the
                reference at the start time.
            ref_controls: ``(N, m)`` reference controls.

        Returns:
            ``(states, controls, soc)`` of the nonlinear closed-loop rollout.
        """
        ref_states = np.asarray(ref_states, dtype=float)
        ref_controls = np.asarray(ref_controls, dtype=float)
        N = len(ref_controls)
        if N < 2 or len(ref_states) != N + 1:
            raise ValueError("tracking needs N >= 2 controls and N + 1 reference states")
        p, w = self.plant, self.weights
        z_ref = np.array([p.reduced(x) for x in ref_states])
        w_ref = ref_controls - p.u_bar
        pol = resolve_feedforward(
            self.tracking_factor(N), p.Ad, p.Bd,
            q=-2 * z_ref[:-1] @ w.Q.T, r=-2 * w_ref @ w.R.T, qN=-2 * w.Q_f @ z_ref[-1],
        )
        # u = u_bar + K z + kff with z = z_ref + err(x, x_ref) for level references
        uff = p.u_bar + np.einsum("kij,kj->ki", pol.K, z_ref[:-1]) + pol.kff
        return p.rollout(x_start, e_start, ref_states[:-1], uff, pol.K, battery)

    def regulate_to(self, x_start, e_start: float, target_position, N: int, battery: BatteryModel):
        """Drive to a hover at ``target_position`` in exactly ``N`` steps.

        The terminal constraint is a large terminal weight. Residual position
        error left by the nonlinear rollout is removed by shifting the
        regulation target against the miss and re-rolling.

        Raises:
            TerminalMissError: if the final position is still off by more than
                ``TERMINAL_TOL`` after the shift iterations.
        """
        p = self.plant
        target = np.asarray(target_position, dtype=float)
        K = self.terminal_gains(N)
        uff = np.tile(p.u_bar, (N, 1))
        aim = target.copy()
        for _ in range(TARGET_SHIFT_ITERS):
            xref = np.tile(p.hover_state(aim), (N, 1))
            xs, us, es = p.rollout(x_start, e_start, xref, uff, K, battery)
            miss_vec = p.position(xs[-1]) - target
            miss = float(np.linalg.norm(miss_vec))
            if miss < 0.1 * TERMINAL_TOL:
                break
            aim = aim - miss_vec
        if not np.isfinite(miss) or miss >= TERMINAL_TOL:
            raise TerminalMissError(miss)
        return xs, us, es, aim

    def b2b_trajectory(self, x_start, e_start: float, x_rp, T_B: float, battery: BatteryModel):
        N = _steps(T_B, self.plant.dt)
        xs, us, es, _ = self.regulate_to(x_start, e_start, np.asarray(x_rp)[:3], N, battery)
        return xs, us, es

    def landing_trajectory(self, x_start, e_start: float, target, T_L: float, battery: BatteryModel) -> "LandingTrajectory":
        if T_L <= 0:
            raise ValueError("landing duration must be positive")
        N = _steps(T_L, self.plant.dt)
        target = np.asarray(target, dtype=float)[:3]
        xs, us, es, _ = self.regulate_to(x_start, e_start, target, N, battery)
        return LandingTrajectory(xs, us, es, target)

    def candidate_trajectory(self, x_start, e_start: float, t_start: float, nominal_states, nominal_controls,
                             x_rp, T_B: float, battery: BatteryModel) -> "CandidateTrajectory":
        """Nominal-tracking segment followed by a b2b segment, executed by the tracking policy.

        Args:
            nominal_states: ``(N_n + 1, n)`` nominal reference from ``t_start``.
            nominal_controls: ``(N_n, m)``.
        """
        nx, nu, _ = self.lq_track(nominal_states, nominal_controls, x_start, e_start, battery)
        bx, bu, _ = self.b2b_trajectory(nx[-1], 0.0, x_rp, T_B, battery)
        ref_x = np.vstack([nx[:-1], bx[:-1]])
        ref_u = np.vstack([nu, bu])
        K = np.broadcast_to(self.tracking_gain, (len(ref_u),) + self.tracking_gain.shape)
        xs, us, es = self.plant.rollout(x_start, e_start, ref_x, ref_u, K, battery)
        return CandidateTrajectory(t_start, self.plant.dt, xs, us, es, len(nu), np.asarray(x_rp, dtype=float))

    def reserve_energy(self, x_start, e_start: float, mean_target, worst_target, T_L: float, battery: BatteryModel,
                       mode: str = "control-energy", descent_speed: float = 0.5, computed_at: int = 0) -> "ReserveEnergy":
        mean = self.landing_trajectory(x_start, e_start, mean_target, T_L, battery)
        worst = self.landing_trajectory(x_start, e_start, worst_target, T_L, battery)
        return reserve_energy(worst, mean, battery, mode, descent_speed, computed_at)


def _steps(T: float, dt: float) -> int:
    N = int(round(T / dt))
    if abs(N * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt = {dt} does not divide T = {T}")
    return N


@dataclass(frozen=True)
class CandidateTrajectory:
    """System trajectory over ``[t_j, t_{j,C}]``: ``N_C + 1`` states and SoC samples."""

    t0: float
    dt: float
    states: NDArray[np.float64]
    controls: NDArray[np.float64]
    soc: NDArray[np.float64]
    n_nominal: int
    x_rp: NDArray[np.float64]

    @property
    def duration(self) -> float:
        return len(self.controls) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def index_at(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt))


@dataclass(frozen=True)
class LandingTrajectory:
    states: NDArray[np.float64]
    controls: NDArray[np.float64]
    soc: NDArray[np.float64]
    target: NDArray[np.float64]

    @property
    def consumed(self) -> float:
        return float(self.soc[0] - self.soc[-1])

    def terminal_residual(self) -> float:
        return float(np.linalg.norm(self.states[-1, :3] - self.target))


@dataclass(frozen=True)
class ReserveEnergy:
    """Reserve SoC ``e_res`` plus the mean landing's own consumption ``e_land``."""

    e_res: float
    e_land: float
    worst_target: NDArray[np.float64]
    mean_target: NDArray[np.float64]
    computed_at: int = 0

    @property
    def floor_above_min(self) -> float:
        """SoC that must remain at the rendezvous point on top of ``e_min``."""
        return self.e_land + self.e_res


def reserve_energy(worst: LandingTrajectory, mean: LandingTrajectory, battery: BatteryModel,
                   mode: str = "control-energy", descent_speed: float = 0.5, computed_at: int = 0) -> ReserveEnergy:
    """Extra SoC the worst-case landing needs over the mean landing.

    Args:
        mode: ``"control-energy"`` compares the two rollouts' consumption only,
            which is zero for a constant-rate battery. ``"duration-extended"``
            also charges the worst case for flying its extra path length at
            ``descent_speed`` at the battery's maximum rate.
    """
    if mode not in ("control-energy", "duration-extended"):
        raise ValueError(f"unknown reserve mode {mode!r}")
    if not np.allclose(worst.states[0], mean.states[0]):
        raise ValueError("both landings must start from the same state")
    extra = worst.consumed - mean.consumed
    if mode == "duration-extended":
        if descent_speed <= 0:
            raise ValueError("descent_speed must be positive")
        start = worst.states[0, :3]
        path_gain = np.linalg.norm(worst.target - start) - np.linalg.norm(mean.target - start)
        extra += battery.max_rate() * max(path_gain, 0.0) / descent_speed
    return ReserveEnergy(max(0.0, float(extra)), mean.consumed, worst.target, mean.target, computed_at)
