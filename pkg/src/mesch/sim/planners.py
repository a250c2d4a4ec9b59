"""Nominal trajectory sources for the simulator.

A planner yields reference positions and velocities on the tracking grid.
After ``reset`` (start of run, or re-launch from the charger) the reference
is blended from the robot's actual position into the planner's path with a
smoothstep, so the first candidates never ask for a jump.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import NDArray

from ..ergodic import (
    CoverageDomain,
    DiscreteTrajectory,
    PTOParams,
    gaussian_mixture_density,
    pto_optimize,
    shift_plan,
    uniform_density,
)
from . import scenario as sc

log = logging.getLogger(__name__)


def _smoothstep(s: NDArray[np.float64]):
    """``w(s) = 1 - (3s^2 - 2s^3)`` on ``[0, 1]`` and its derivative."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - (3 * s**2 - 2 * s**3), -(6 * s - 6 * s**2)


class NominalPlanner:
    """Base class handling the post-reset blend."""

    def __init__(self, blend_time: float):
        self.blend_time = blend_time
        self._t_reset = 0.0
        self._offset = np.zeros(3)

    def reset(self, t: float, position, velocity=None) -> None:
        self._t_reset = t
        self._restart(t, np.asarray(position, dtype=float), None if velocity is None else np.asarray(velocity, dtype=float))
        p0, _ = self._path(np.array([t]))
        self._offset = np.asarray(position, dtype=float) - p0[0]

    def sample(self, t0: float, N: int, dt: float):
        """Reference ``(positions, velocities)`` at ``t0 + k dt`` for ``k = 0..N``."""
        t = t0 + dt * np.arange(N + 1)
        pos, vel = self._path(t)
        if self.blend_time > 0 and np.any(self._offset):
            w, dw = _smoothstep((t - self._t_reset) / self.blend_time)
            pos = pos + w[:, None] * self._offset
            vel = vel + (dw / self.blend_time)[:, None] * self._offset
        return pos, vel

    def _restart(self, t, position, velocity) -> None:
        pass

    def _path(self, t: NDArray[np.float64]):
        raise NotImplementedError


class CircleNominal(NominalPlanner):
    """Constant-speed circle at a fixed altitude."""

    def __init__(self, center, radius: float, speed: float, altitude: float, clockwise: bool = False,
                 blend_time: float = 6.0):
        super().__init__(blend_time)
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        self.omega = (-1.0 if clockwise else 1.0) * speed / radius
        self.altitude = altitude
        self._phase = 0.0
        self._t0 = 0.0

    def _restart(self, t, position, velocity):
        d = position[:2] - self.center
        self._phase = float(np.arctan2(d[1], d[0])) if np.any(d) else 0.0
        self._t0 = t

    def _path(self, t):
        ang = self._phase + self.omega * (t - self._t0)
        c, s = np.cos(ang), np.sin(ang)
        pos = np.stack([self.center[0] + self.radius * c, self.center[1] + self.radius * s,
                        np.full_like(t, self.altitude)], axis=1)
        vel = np.stack([-self.radius * self.omega * s, self.radius * self.omega * c, np.zeros_like(t)], axis=1)
        return pos, vel


class WaypointNominal(NominalPlanner):
    """Closed polyline through the waypoints at constant speed."""

    def __init__(self, waypoints, speed: float, blend_time: float = 6.0):
        super().__init__(blend_time)
        pts = np.asarray(waypoints, dtype=float)
        self.points = np.vstack([pts, pts[:1]])
        seg = np.diff(self.points, axis=0)
        self.lengths = np.linalg.norm(seg, axis=1)
        if np.any(self.lengths == 0):
            raise ValueError("consecutive waypoints must differ")
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.speed = speed
        self._s0 = 0.0
        self._t0 = 0.0

    def _restart(self, t, position, velocity):
        nearest = int(np.argmin(np.linalg.norm(self.points[:-1] - position, axis=1)))
        self._s0 = float(self.cum[nearest])
        self._t0 = t

    def _path(self, t):
        s = np.mod(self._s0 + self.speed * (t - self._t0), self.cum[-1])
        idx = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.lengths) - 1)
        frac = (s - self.cum[idx]) / self.lengths[idx]
        seg = self.points[idx + 1] - self.points[idx]
        pos = self.points[idx] + frac[:, None] * seg
        vel = self.speed * seg / self.lengths[idx, None]
        return pos, vel


class ErgodicNominal(NominalPlanner):
    """Receding ergodic coverage plans on the planar domain at a fixed altitude.

    Each plan covers ``T_H`` seconds. When the tracking horizon would run
    past the current plan, a new plan is started from the old plan's state
    at its last knot before the query time.
    """

    def __init__(self, domain: CoverageDomain, density, params: PTOParams, altitude: float, horizon: float,
                 blend_time: float = 6.0):
        super().__init__(blend_time)
        self.domain = domain
        self.density = density
        self.params = params
        self.altitude = altitude
        self.horizon = horizon
        self.plan: DiscreteTrajectory | None = None
        self.plan_t0 = 0.0
        self.replans = 0

    def _initial_guess(self, x_ic, warm: DiscreteTrajectory | None) -> DiscreteTrajectory:
        """Warm start for the next plan.

        A replan continues the remainder of the previous plan, held at its
        last state. A fresh plan starts with a gentle constant push whose
        heading turns by the golden angle each time: from rest, a symmetric
        start such as a point on the domain diagonal is a stationary point of
        the objective that plain descent never leaves.
        """
        N, dt = self.params.N, self.params.dt
        if warm is not None:
            pad = N - warm.N
            states = np.vstack([warm.states, np.repeat(warm.states[-1:], pad, axis=0)])
            controls = np.vstack([warm.controls, np.zeros((pad, warm.controls.shape[1]))])
            states[0] = x_ic
            return DiscreteTrajectory(states, controls, dt)
        heading = 0.5 + self.replans * np.pi * (3.0 - np.sqrt(5.0))
        u = 0.05 * np.array([np.cos(heading), np.sin(heading)])
        controls = np.tile(u, (N - 1, 1))
        states = np.empty((N, 4))
        states[0] = x_ic
        for k in range(N - 1):
            states[k + 1, :2] = states[k, :2] + dt * states[k, 2:]
            states[k + 1, 2:] = states[k, 2:] + dt * u
        return DiscreteTrajectory(states, controls, dt)

    def _optimize(self, t0: float, x_ic, warm: DiscreteTrajectory | None = None) -> None:
        x_ic = np.asarray(x_ic, dtype=float).copy()
        L = np.asarray(self.domain.lengths)
        x_ic[:2] = np.clip(x_ic[:2], 0.0, L)
        res = pto_optimize(x_ic, self.density, self.params, initial=self._initial_guess(x_ic, warm))
        self.plan, self.plan_t0 = res.trajectory, t0
        self.replans += 1
        log.debug("ergodic plan at t=%.2f: %d iterations, status %s", t0, res.iterations, res.status)

    def _restart(self, t, position, velocity):
        v = np.zeros(2) if velocity is None else velocity[:2]
        self._optimize(t, np.concatenate([position[:2], v]))

    def _ensure(self, t_end: float) -> None:
        dt = self.params.dt
        plan_end = self.plan_t0 + (self.plan.N - 1) * dt
        if t_end + dt <= plan_end + 1e-9:
            return
        # restart from the knot just before the earliest time still needed
        knot = int(np.floor((self._query_start - self.plan_t0) / dt + 1e-9))
        knot = max(0, min(knot, self.plan.N - 1))
        self._optimize(self.plan_t0 + knot * dt, self.plan.states[knot], shift_plan(self.plan, knot))

    def sample(self, t0: float, N: int, dt: float):
        self._query_start = t0
        self._ensure(t0 + N * dt)
        return super().sample(t0, N, dt)

    def _path(self, t):
        dt = self.params.dt
        states = self.plan.states
        s = (t - self.plan_t0) / dt
        idx = np.clip(np.floor(s + 1e-9).astype(int), 0, self.plan.N - 2)
        frac = np.clip(s - idx, 0.0, 1.0)
        # Euler-consistent: position linear between knots, velocity held per interval
        xy = states[idx, :2] + frac[:, None] * (states[idx + 1, :2] - states[idx, :2])
        vxy = (states[idx + 1, :2] - states[idx, :2]) / dt
        pos = np.column_stack([xy, np.full_like(t, self.altitude)])
        vel = np.column_stack([vxy, np.zeros_like(t)])
        return pos, vel


def build_planner(cfg, scenario: "sc.Scenario") -> NominalPlanner:
    if isinstance(cfg, sc.CirclePlanner):
        return CircleNominal(cfg.center, cfg.radius, cfg.speed, cfg.altitude, cfg.clockwise, cfg.blend_time)
    if isinstance(cfg, sc.WaypointPlanner):
        return WaypointNominal(cfg.waypoints, cfg.speed, cfg.blend_time)
    domain = CoverageDomain(scenario.domain)
    if isinstance(cfg.density, sc.GaussianMixtureDensity):
        density = gaussian_mixture_density(domain, cfg.density.means, cfg.density.covs, cfg.density.weights, K=cfg.K)
    else:
        density = uniform_density(domain, K=cfg.K)
    params = PTOParams(T_H=cfg.T_H, dt=cfg.dt, q=cfg.q, c_b=cfg.c_b, R=cfg.R, max_iters=cfg.max_iters)
    return ErgodicNominal(domain, density, params, cfg.altitude, scenario.horizons.T_N, cfg.blend_time)
