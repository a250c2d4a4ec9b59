"""Scenario files: schema, loading, and consistency checks.

Scenarios are JSON documents validated by pydantic. Every field has a
default mirroring the four-quadrotor persistent-monitoring setup except the
robot list, which must be given.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..dynamics import ConstantRate, ControlDependent


class ScenarioError(ValueError):
    """The scenario file is missing, malformed, or violates the schema."""


class ConsistencyError(ScenarioError):
    """Individually valid fields that contradict each other."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- batteries ------------------------------------------------------------------

class ConstantBattery(_Model):
    kind: Literal["constant"] = "constant"
    k_d: float = Field(0.667, gt=0)
    e_min: float = Field(10.0, ge=0)
    e_max: float = Field(100.0, gt=0)

    def build(self) -> ConstantRate:
        return ConstantRate(self.k_d, self.e_min, self.e_max)


class ControlDependentBattery(_Model):
    kind: Literal["control-dependent"]
    eta: float = Field(gt=0)
    C: float = Field(gt=0)
    alpha_coef: float = Field(1.0, gt=0)
    alpha_power: float = Field(1.0, gt=0)
    u_norm_max: float = Field(4.0, gt=0)
    e_min: float = Field(10.0, ge=0)
    e_max: float = Field(100.0, gt=0)

    def build(self) -> ControlDependent:
        return ControlDependent(self.eta, self.C, self.alpha_coef, self.alpha_power, self.u_norm_max,
                                self.e_min, self.e_max)


Battery = Annotated[Union[ConstantBattery, ControlDependentBattery], Field(discriminator="kind")]


# --- planners -------------------------------------------------------------------

class UniformDensity(_Model):
    kind: Literal["uniform"] = "uniform"


class GaussianMixtureDensity(_Model):
    kind: Literal["gaussian-mixture"]
    means: list[tuple[float, float]] = Field(min_length=1)
    covs: list[tuple[tuple[float, float], tuple[float, float]]]
    weights: list[float]


Density = Annotated[Union[UniformDensity, GaussianMixtureDensity], Field(discriminator="kind")]


class ErgodicPlanner(_Model):
    kind: Literal["ergodic"] = "ergodic"
    altitude: float = Field(2.0, gt=0)
    T_H: float = Field(30.0, gt=0)
    dt: float = Field(0.2, gt=0)
    q: float = Field(1000.0, gt=0)
    c_b: float = Field(100.0, gt=0)
    R: float = Field(1.0, gt=0)
    K: int = Field(10, ge=2)
    max_iters: int = Field(50, ge=1)
    density: Density = UniformDensity()
    blend_time: float = Field(6.0, ge=0)


class CirclePlanner(_Model):
    kind: Literal["circle"]
    center: tuple[float, float]
    radius: float = Field(gt=0)
    speed: float = Field(gt=0)
    altitude: float = Field(2.0, gt=0)
    clockwise: bool = False
    blend_time: float = Field(6.0, ge=0)


class WaypointPlanner(_Model):
    kind: Literal["waypoint"]
    waypoints: list[tuple[float, float, float]] = Field(min_length=2)
    speed: float = Field(gt=0)
    blend_time: float = Field(6.0, ge=0)


Planner = Annotated[Union[ErgodicPlanner, CirclePlanner, WaypointPlanner], Field(discriminator="kind")]


# --- robots and charger ---------------------------------------------------------

class InitialState(_Model):
    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    soc: float = Field(gt=0)


class Robot(_Model):
    id: int | None = Field(None, ge=0)
    model: Literal["quadrotor", "double-integrator"] = "quadrotor"
    battery: Battery = ConstantBattery()
    initial: InitialState
    planner: Planner | None = None


class Charger(_Model):
    """Ground charging robot.

    Planar states ``[x, y, theta]`` (and 3x3 covariances) are zero-padded to
    ``[x, y, z, theta]`` with ``z = 0``.
    """

    model: Literal["unicycle", "static"] = "unicycle"
    initial: list[float] = Field(default_factory=lambda: [7.0, 5.0, math.pi / 2])
    control: tuple[float, float] = (0.2, 0.1)
    W: list[float] | list[list[float]] = Field(default_factory=lambda: [0.01, 0.01, 0.001])
    V: list[float] | list[list[float]] = Field(default_factory=lambda: [0.01, 0.01])
    initial_cov: list[float] | list[list[float]] = Field(default_factory=lambda: [0.01, 0.01, 0.001])
    observation: Literal["planar-position", "position", "full"] = "planar-position"
    d: float = Field(1.0, gt=0)

    @field_validator("initial")
    @classmethod
    def _state_length(cls, v):
        if len(v) not in (3, 4):
            raise ValueError("charger state must be [x, y, theta] or [x, y, z, theta]")
        return v

    def state(self) -> np.ndarray:
        return pad_planar_state(np.asarray(self.initial, dtype=float))

    def process_cov(self) -> np.ndarray:
        return pad_planar_cov(_as_matrix(self.W, "charger.W"))

    def initial_covariance(self) -> np.ndarray:
        return pad_planar_cov(_as_matrix(self.initial_cov, "charger.initial_cov"))

    def measurement_cov(self) -> np.ndarray:
        return _as_matrix(self.V, "charger.V")

    def observation_rows(self) -> list[int]:
        return {"planar-position": [0, 1], "position": [0, 1, 2], "full": [0, 1, 2, 3]}[self.observation]


class Horizons(_Model):
    T_N: float = Field(2.0, gt=0)
    T_B: float = Field(10.0, gt=0)
    T_C: float = Field(12.0, gt=0)
    T_R: float = Field(18.0, gt=0)
    T_L: float | None = Field(None, gt=0)
    T_E: float = Field(2.0, gt=0)
    T_ch: float = Field(0.0, ge=0)
    T_delta: float = Field(15.0, ge=0)

    @property
    def landing(self) -> float:
        return self.T_R - self.T_C if self.T_L is None else self.T_L


class Reserve(_Model):
    mode: Literal["control-energy", "duration-extended"] = "duration-extended"
    descent_speed: float = Field(0.5, gt=0)


class Weights(_Model):
    """Diagonal tracking weights in the plant's error coordinates."""

    Q: list[float]
    R: list[float]


class Scenario(_Model):
    name: str = "scenario"
    duration: float = Field(600.0, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    dt: float = Field(0.05, gt=0)
    domain: tuple[float, float] = (10.0, 10.0)
    horizons: Horizons = Horizons()
    gap_margin: float = Field(2.0, ge=0)
    station_radius: float = Field(0.3, gt=0)
    robots: list[Robot] = Field(min_length=1)
    planner: Planner = ErgodicPlanner()
    charger: Charger = Charger()
    reserve: Reserve = Reserve()
    weights: Weights | None = None
    deterministic_charger: bool = False

    def robot_ids(self) -> list[int]:
        return [i if r.id is None else r.id for i, r in enumerate(self.robots)]

    def planner_for(self, robot: Robot) -> ErgodicPlanner | CirclePlanner | WaypointPlanner:
        return robot.planner or self.planner

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with top-level fields replaced (re-validated)."""
        data = self.model_dump()
        data.update({k: v for k, v in kw.items() if v is not None})
        return build_scenario(data)


# --- helpers --------------------------------------------------------------------

def _as_matrix(v, name: str) -> np.ndarray:
    M = np.asarray(v, dtype=float)
    if M.ndim == 1:
        return np.diag(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConsistencyError(f"{name}: expected a diagonal list or a square matrix, got shape {M.shape}")
    return M


def pad_planar_state(x: np.ndarray) -> np.ndarray:
    """``[x, y, theta] -> [x, y, 0, theta]``; 4-vectors pass through."""
    if x.size == 3:
        return np.array([x[0], x[1], 0.0, x[2]])
    return x


def pad_planar_cov(S: np.ndarray) -> np.ndarray:
    if S.shape == (3, 3):
        out = np.zeros((4, 4))
        idx = [0, 1, 3]
        out[np.ix_(idx, idx)] = S
        return out
    return S


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def check_consistency(s: Scenario) -> None:
    h = s.horizons
    tol = 1e-9
    if abs(h.T_C - (h.T_N + h.T_B)) > tol:
        raise ConsistencyError(f"horizons: T_C = {h.T_C} but T_N + T_B = {h.T_N + h.T_B}")
    if abs(h.T_R - (h.T_C + h.landing)) > tol:
        raise ConsistencyError(f"horizons: T_R = {h.T_R} but T_C + T_L = {h.T_C + h.landing}")
    if h.landing <= 0:
        raise ConsistencyError("horizons: landing time T_R - T_C must be positive")
    if h.T_E > h.T_N + tol:
        raise ConsistencyError(f"horizons: T_E = {h.T_E} exceeds nominal validity T_N = {h.T_N}")
    for name in ("T_N", "T_B", "T_C", "T_R", "T_E"):
        T = getattr(h, name)
        if abs(round(T / s.dt) * s.dt - T) > tol:
            raise ConsistencyError(f"horizons.{name} = {T} is not a multiple of dt = {s.dt}")
    if abs(round(h.landing / s.dt) * s.dt - h.landing) > tol or abs(round(h.T_ch / s.dt) * s.dt - h.T_ch) > tol:
        raise ConsistencyError("horizons: T_L and T_ch must be multiples of dt")
    ids = s.robot_ids()
    if len(set(ids)) != len(ids):
        raise ConsistencyError(f"robots: duplicate ids {ids}")
    for i, r in zip(ids, s.robots):
        b = r.battery
        if not b.e_min < b.e_max:
            raise ConsistencyError(f"robots[{i}].battery: e_min must be below e_max")
        if not b.e_min <= r.initial.soc <= b.e_max:
            raise ConsistencyError(f"robots[{i}].initial.soc = {r.initial.soc} outside [e_min, e_max]")
        p = s.planner_for(r)
        if isinstance(p, ErgodicPlanner):
            if abs(round(p.T_H / p.dt) * p.dt - p.T_H) > tol:
                raise ConsistencyError(f"robots[{i}] planner: T_H not a multiple of dt")
            if p.T_H < h.T_N + p.dt:
                raise ConsistencyError(f"robots[{i}] planner: T_H shorter than the nominal horizon")
    c = s.charger
    W, V, S0 = c.process_cov(), c.measurement_cov(), c.initial_covariance()
    if W.shape != (4, 4) or S0.shape != (4, 4):
        raise ConsistencyError("charger: W and initial_cov must be 3x3 (planar) or 4x4")
    if V.shape != (len(c.observation_rows()),) * 2:
        raise ConsistencyError(f"charger.V: shape {V.shape} does not match observation '{c.observation}'")
    for name, M in (("W", W), ("V", V), ("initial_cov", S0)):
        if not np.allclose(M, M.T) or np.linalg.eigvalsh(M)[0] < -1e-12:
            raise ConsistencyError(f"charger.{name} must be symmetric positive semidefinite")
    if np.linalg.eigvalsh(V)[0] <= 0:
        raise ConsistencyError("charger.V must be positive definite")
    if s.weights is not None:
        for i, r in zip(ids, s.robots):
            n, m = (12, 4) if r.model == "quadrotor" else (6, 3)
            if len(s.weights.Q) != n or len(s.weights.R) != m:
                raise ConsistencyError(f"weights: robot {i} ({r.model}) needs {n} Q and {m} R entries")


def build_scenario(data: dict) -> Scenario:
    """Validate a scenario given as a dict."""
    try:
        s = Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc)) from exc
    check_consistency(s)
    return s


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a JSON scenario file.

    Raises:
        ScenarioError: unreadable file, invalid JSON, or schema violation; the
            message names the offending field.
        ConsistencyError: horizons or covariances that contradict each other.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return build_scenario(data)
    except ConsistencyError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def json_schema() -> dict:
    return Scenario.model_json_schema()


def staggered_soc(k, rng: np.random.Generator, horizons: Horizons | None = None, gap_margin: float = 2.0,
                  e_min: float = 10.0, e_max: float = 100.0, reserve_pad: float = 3.0) -> np.ndarray:
    """Initial SoCs whose remaining battery times pass every gap flag.

    Robots are ranked by battery capacity in seconds. The ``i``-th gets a
    remaining time of ``T_R + 2 + i * (slot + 1)`` plus a sorted random
    share of whatever spare time the ranking leaves, so consecutive robots
    are always more than one slot apart.

    Args:
        k: per-robot discharge rates in SoC per second.
        reserve_pad: seconds of SoC on top of the target time, covering the
            landing reserve.

    Raises:
        ValueError: the fleet cannot be staggered within ``e_max``.
    """
    h = horizons or Horizons()
    k = np.asarray(k, dtype=float)
    slot = h.T_E * (math.floor((h.T_ch + h.T_delta + gap_margin) / h.T_E) + 1)
    T_cap = (e_max - e_min) / k - reserve_pad
    base = h.T_R + 2.0 + np.arange(len(k)) * (slot + 1.0)
    by_cap = np.argsort(T_cap, kind="stable")
    slack = float(np.min(T_cap[by_cap] - base))
    if slack < 0:
        raise ValueError(f"{len(k)} robots at k_d up to {k.max():.2f} cannot satisfy the gap flags")
    T_F = base + np.sort(rng.uniform(0.0, slack, len(k)))
    soc = np.empty(len(k))
    soc[by_cap] = np.minimum(e_min + k[by_cap] * (T_F + reserve_pad), e_max)
    return soc


def random_scenario(seed: int, n_robots: int | None = None, duration: float = 300.0) -> Scenario:
    """Randomized feasible scenario: 2-6 quadrotors on circle nominals.

    Discharge rates are drawn from ``[0.3, 0.7]`` %/s and initial SoCs come
    from ``staggered_soc``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5C,)))
    N = int(rng.integers(2, 7)) if n_robots is None else n_robots
    k = rng.uniform(0.3, 0.7, N)
    soc = staggered_soc(k, rng)
    robots = []
    for i in range(N):
        center = rng.uniform(3.0, 7.0, 2)
        radius = rng.uniform(1.0, 2.5)
        ang = rng.uniform(0, 2 * np.pi)
        start = center + radius * np.array([np.cos(ang), np.sin(ang)])
        robots.append({
            "id": i,
            "battery": {"kind": "constant", "k_d": float(k[i]), "e_min": 10.0, "e_max": 100.0},
            "initial": {"position": [float(start[0]), float(start[1]), 2.0], "soc": float(soc[i])},
            "planner": {"kind": "circle", "center": [float(c) for c in center], "radius": float(radius),
                        "speed": float(rng.uniform(0.3, 0.8)), "clockwise": bool(rng.integers(0, 2))},
        })
    return build_scenario({"name": f"random-{seed}", "duration": duration, "seed": int(seed), "robots": robots})


def formation_scenario(n_robots: int, model: str = "quadrotor", seed: int = 0, k_range=(0.10, 0.15),
                       duration: float = 600.0, name: str | None = None) -> dict:
    """Large-fleet scenario: robots on a grid of small circles and square loops.

    Every third robot flies a square waypoint loop, the rest fly circles
    with alternating direction. Returns the raw dict so it can be saved.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF0,)))
    side = math.ceil(math.sqrt(n_robots))
    grid = np.linspace(1.5, 8.5, side)
    k = rng.uniform(*k_range, n_robots)
    soc = staggered_soc(k, rng)
    robots = []
    for i in range(n_robots):
        c = np.array([grid[i % side], grid[i // side]])
        if i % 3 == 2:
            r = 0.6
            loop = [[c[0] - r, c[1] - r, 2.0], [c[0] + r, c[1] - r, 2.0], [c[0] + r, c[1] + r, 2.0],
                    [c[0] - r, c[1] + r, 2.0]]
            planner = {"kind": "waypoint", "waypoints": [[round(v, 6) for v in p] for p in loop], "speed": 0.4}
            start = loop[0]
        else:
            planner = {"kind": "circle", "center": [round(float(v), 6) for v in c], "radius": 0.7, "speed": 0.4,
                       "clockwise": bool(i % 2)}
            start = [round(float(c[0]) + 0.7, 6), round(float(c[1]), 6), 2.0]
        robots.append({
            "id": i, "model": model,
            "battery": {"kind": "constant", "k_d": round(float(k[i]), 6), "e_min": 10.0, "e_max": 100.0},
            "initial": {"position": start, "soc": round(float(soc[i]), 6)},
            "planner": planner,
        })
    return {"name": name or f"formation_{n_robots}", "duration": duration, "seed": seed, "robots": robots}
