"""Closed-loop multi-robot recharge simulation.

Time advances in integer ticks of ``dt``. Every ``T_E`` seconds a scheduling
round runs:

1. charging robots whose recharge has finished re-launch at full SoC;
2. the charger belief is propagated ``T_R`` ahead and the rendezvous point
   and worst-case landing target are placed;
3. every active robot builds a candidate and its landing reserve;
4. the scheduler decides who commits, who keeps, and who returns.

Between rounds robots replay their committed trajectories sample by sample
(the committed rollout *is* the closed-loop execution, so replaying it is
exact), landing robots run the landing regulator against the live charger
estimate, and the charger moves under Euler-Maruyama process noise while
the EKF filters its position measurements.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import chi2

from ..dynamics import ConfigurationError, rk4_step
from ..estimation import (
    GaussianBelief,
    NoiseModel,
    Observation,
    PlanarUnicycleCharger,
    ekf_predict,
    ekf_update,
    propagate_horizon,
    static_charger,
    worst_case_state,
)
from ..scheduler import (
    Action,
    GapParams,
    RobotDecision,
    RobotSlot,
    ScheduleDecision,
    Trigger,
    eware,
    evaluate_flags,
    gware,
    remaining_battery_time,
    schedule,
    sort_by_remaining_time,
)
from ..trajgen import (
    CandidateTrajectory,
    DoubleIntegratorPlant,
    QuadrotorPlant,
    ReserveEnergy,
    TerminalMissError,
    TrackingWeights,
    TrajectoryGenerator,
)
from .planners import NominalPlanner, build_planner
from .scenario import Scenario

log = logging.getLogger(__name__)

SOC_TOL = 1e-9
ELLIPSE_95 = float(chi2.ppf(0.95, 2))


class Status(str, Enum):
    ACTIVE = "active"
    RETURNING = "returning"
    CHARGING = "charging"


STATUS_CODES = {Status.ACTIVE: 0, Status.RETURNING: 1, Status.CHARGING: 2}
STATUS_NAMES = {v: k.value for k, v in STATUS_CODES.items()}


class MonitorViolation(RuntimeError):
    """A safety invariant failed during a run that does not allow violations."""

    def __init__(self, violation: dict, log_so_far: "SimLog"):
        super().__init__(f"monitor violation at t={violation['t']:.2f}: {violation['kind']} ({violation['detail']})")
        self.violation = violation
        self.log = log_so_far


class SimulationError(RuntimeError):
    pass


@dataclass
class RunOptions:
    seed: int | None = None
    deterministic_charger: bool | None = None
    ablate: str | None = None  # "gware" | "eware"
    duration: float | None = None
    allow_violations: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.ablate not in (None, "gware", "eware"):
            raise ValueError(f"unknown ablation {self.ablate!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class Committed:
    traj: CandidateTrajectory
    reserve: ReserveEnergy
    start_tick: int
    iteration: int


@dataclass
class RobotRuntime:
    id: int
    plant: QuadrotorPlant | DoubleIntegratorPlant
    gen: TrajectoryGenerator
    battery: object
    planner: NominalPlanner
    x: np.ndarray
    e: float
    status: Status = Status.ACTIVE
    committed: Committed | None = None
    landing_start: int | None = None   # tick at which the landing regulator takes over
    touchdown: int | None = None       # tick of (planned) touchdown
    charge_end: int | None = None
    reserve_floor: float = 0.0
    depleted: bool = False
    below_min: bool = False

    @property
    def e_min(self) -> float:
        return self.battery.e_min


@dataclass
class SimLog:
    """Everything a run produced; tick arrays are indexed ``[tick, robot]``."""

    scenario: str
    seed: int
    dt: float
    robot_ids: list[int]
    e_min: dict[int, float]
    t: np.ndarray
    soc: np.ndarray
    status: np.ndarray
    dist: np.ndarray
    pos: np.ndarray
    reserve_floor: np.ndarray
    charger: np.ndarray
    belief_mean: np.ndarray
    belief_trace: np.ndarray
    iterations: list[dict] = field(default_factory=list)
    returns: list[dict] = field(default_factory=list)
    departures: list[dict] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    coverage_checks: list[bool] = field(default_factory=list)
    co_occupancy_events: int = 0
    min_gap_required: float = 0.0
    options: dict = field(default_factory=dict)
    density_domain: tuple[float, float] = (10.0, 10.0)

    @property
    def n_ticks(self) -> int:
        return len(self.t)

    def truncated(self, n: int) -> "SimLog":
        """Copy keeping the first ``n`` ticks (used when a run aborts)."""
        out = SimLog(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        for name in ("t", "soc", "status", "dist", "pos", "reserve_floor", "charger", "belief_mean", "belief_trace"):
            setattr(out, name, getattr(self, name)[:n].copy())
        return out


# --- construction -------------------------------------------------------------

def _steps(T: float, dt: float) -> int:
    return int(round(T / dt))


def _rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one named stream of a run."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


STREAM_CHARGER_INIT, STREAM_PROCESS, STREAM_MEASUREMENT = 1, 2, 3


def _generators(s: Scenario) -> dict[str, TrajectoryGenerator]:
    out = {}
    for r in s.robots:
        if r.model in out:
            continue
        plant = QuadrotorPlant(dt=s.dt) if r.model == "quadrotor" else DoubleIntegratorPlant(3, dt=s.dt)
        gen = TrajectoryGenerator.for_plant(plant)
        if s.weights is not None:
            gen = TrajectoryGenerator(plant, TrackingWeights(np.diag(s.weights.Q), np.diag(s.weights.R)),
                                      gen.transfer_weights)
        h = s.horizons
        # fill the shared caches up front so worker threads only read them
        gen.tracking_factor(_steps(h.T_N, s.dt))
        gen.terminal_gains(_steps(h.T_B, s.dt))
        gen.terminal_gains(_steps(h.landing, s.dt))
        _ = gen.tracking_gain
        out[r.model] = gen
    return out


class Simulation:
    def __init__(self, scenario: Scenario, options: RunOptions | None = None):
        opts = options or RunOptions()
        self.opts = opts
        if opts.duration is not None or opts.seed is not None or opts.deterministic_charger is not None:
            scenario = scenario.with_overrides(duration=opts.duration, seed=opts.seed,
                                               deterministic_charger=opts.deterministic_charger)
        self.s = s = scenario
        self.allow_violations = opts.allow_violations or opts.ablate is not None
        h = s.horizons
        self.dt = s.dt
        self.n_E = _steps(h.T_E, s.dt)
        self.n_N = _steps(h.T_N, s.dt)
        self.n_B = _steps(h.T_B, s.dt)
        self.n_C = _steps(h.T_C, s.dt)
        self.n_L = _steps(h.landing, s.dt)
        self.n_ch = _steps(h.T_ch, s.dt)
        self.n_total = _steps(s.duration, s.dt)
        self.gap = GapParams(h.T_ch, h.T_delta, h.landing, h.T_C, T_E=h.T_E, margin=s.gap_margin)

        # charger
        c = s.charger
        self.charger_model = PlanarUnicycleCharger() if c.model == "unicycle" else static_charger(4)
        self.charger_u = np.asarray(c.control if c.model == "unicycle" else (0.0, 0.0), dtype=float)
        det = s.deterministic_charger
        W = np.zeros((4, 4)) if det else c.process_cov()
        S0 = np.zeros((4, 4)) if det else c.initial_covariance()
        V = c.measurement_cov()
        self.noise = NoiseModel(W, V)
        self.obs = Observation(np.eye(4)[c.observation_rows()])
        self.deterministic = det
        m0 = c.state()
        self.belief = GaussianBelief(m0, S0, 0.0)
        if det:
            self.charger = m0.copy()
        else:
            self.charger = _rng(s.seed, STREAM_CHARGER_INIT).multivariate_normal(m0, S0, method="eigh")
        self.L_W = _psd_sqrt(W)
        self.L_V = _psd_sqrt(V)
        self.rng_process = _rng(s.seed, STREAM_PROCESS)
        self.rng_measure = _rng(s.seed, STREAM_MEASUREMENT)

        # robots
        gens = _generators(s)
        self.robots: list[RobotRuntime] = []
        for rid, r in sorted(zip(s.robot_ids(), s.robots), key=lambda p: p[0]):
            gen = gens[r.model]
            planner = build_planner(s.planner_for(r), s)
            planner.reset(0.0, r.initial.position, r.initial.velocity)
            batt = r.battery.build()
            x0 = gen.plant.hover_state(r.initial.position, r.initial.velocity)
            self.robots.append(RobotRuntime(rid, gen.plant, gen, batt, planner, x0, float(r.initial.soc),
                                            reserve_floor=batt.e_min))
        self.executor = ThreadPoolExecutor(opts.threads) if opts.threads > 1 else None
        self.pending_checks: list[tuple[int, np.ndarray, np.ndarray]] = []
        self._co_occupied = False
        self._last_return: float | None = None
        self.log = self._empty_log()

    # -- log -------------------------------------------------------------------

    def _empty_log(self) -> SimLog:
        n, R = self.n_total + 1, len(self.robots)
        return SimLog(
            scenario=self.s.name, seed=self.s.seed, dt=self.dt, robot_ids=[r.id for r in self.robots],
            e_min={r.id: r.e_min for r in self.robots},
            t=np.arange(n) * self.dt, soc=np.zeros((n, R)), status=np.zeros((n, R), dtype=np.int8),
            dist=np.zeros((n, R)), pos=np.zeros((n, R, 3)), reserve_floor=np.zeros((n, R)),
            charger=np.zeros((n, 4)), belief_mean=np.zeros((n, 4)), belief_trace=np.zeros(n),
            min_gap_required=self.gap.min_gap,
            options={"ablate": self.opts.ablate, "deterministic_charger": self.deterministic,
                     "allow_violations": self.allow_violations, "duration": self.s.duration},
            density_domain=tuple(self.s.domain),
        )

    def _record_tick(self, n: int) -> None:
        L = self.log
        L.charger[n] = self.charger
        L.belief_mean[n] = self.belief.mean
        L.belief_trace[n] = float(np.trace(self.belief.cov))
        station = self.charger[:3]
        occupants = []
        for i, r in enumerate(self.robots):
            p = r.plant.position(r.x)
            L.pos[n, i] = p
            L.soc[n, i] = r.e
            L.status[n, i] = STATUS_CODES[r.status]
            d = 0.0 if r.status is Status.CHARGING else float(np.linalg.norm(p - station))
            L.dist[n, i] = d
            L.reserve_floor[n, i] = r.reserve_floor
            if r.status is Status.CHARGING or d < self.s.station_radius:
                occupants.append(r.id)
        self._monitor_tick(n, occupants)

    # -- monitor ---------------------------------------------------------------

    def _violate(self, n: int, kind: str, detail: str, robots: list[int]) -> None:
        v = {"t": float(self.log.t[n]), "tick": n, "kind": kind, "detail": detail, "robots": robots}
        self.log.violations.append(v)
        log.warning("monitor: %s at t=%.2f (%s)", kind, v["t"], detail)
        if not self.allow_violations:
            raise MonitorViolation(v, self.log.truncated(n + 1))

    def _monitor_tick(self, n: int, occupants: list[int]) -> None:
        for r in self.robots:
            below = r.e < r.e_min - SOC_TOL
            if below and not r.below_min:
                self._violate(n, "soc-below-min", f"robot {r.id} SoC {r.e:.4f} < e_min {r.e_min}", [r.id])
            r.below_min = below
        co = len(occupants) >= 2
        if co and not self._co_occupied:
            self.log.co_occupancy_events += 1
            self._violate(n, "co-occupancy", f"robots {occupants} at the station", occupants)
        self._co_occupied = co

    def _on_touchdown(self, n: int, r: RobotRuntime) -> None:
        t = float(self.log.t[n])
        self.log.returns.append({"t": t, "robot": r.id})
        if self._last_return is not None and t - self._last_return <= self.gap.min_gap + SOC_TOL:
            self._violate(n, "return-gap", f"robot {r.id} returned {t - self._last_return:.3f} s after the previous "
                          f"return (need > {self.gap.min_gap})", [r.id])
        self._last_return = t

    # -- scheduling round ------------------------------------------------------

    def _build_slot(self, r: RobotRuntime, t: float, rp: np.ndarray, mean_target, worst_target):
        s, h = self.s, self.s.horizons
        pos, vel = r.planner.sample(t, self.n_N, self.dt)
        ref_x, ref_u = r.plant.reference(pos, vel)
        try:
            cand = r.gen.candidate_trajectory(r.x, r.e, t, ref_x, ref_u, rp, h.T_B, r.battery)
            reserve = r.gen.reserve_energy(cand.states[-1], cand.soc[-1], mean_target, worst_target, h.landing,
                                           r.battery, s.reserve.mode, s.reserve.descent_speed)
        except TerminalMissError as exc:
            log.info("robot %d: candidate rejected (%s)", r.id, exc)
            cand, reserve = None, None
        e_res = reserve.e_res if reserve is not None else (r.committed.reserve.e_res if r.committed else 0.0)
        T_F = remaining_battery_time(r.e, r.battery, reserve=e_res).seconds
        floor = r.e_min + (reserve.floor_above_min if reserve is not None else 0.0)
        slot = RobotSlot(r.id, T_F, None if cand is None else cand.soc, floor, r.committed is not None)
        return slot, cand, reserve

    def _blocked(self, n: int) -> bool:
        """Whether a robot already heading home is too close in time for another return to start."""
        earliest = n - self.n_E + self.n_C + self.n_L  # touchdown of a robot flagged this round
        for r in self.robots:
            if r.status is not Status.ACTIVE and r.touchdown is not None:
                if (earliest - r.touchdown) * self.dt <= self.gap.min_gap + SOC_TOL:
                    return True
        return False

    def _decide(self, slots: list[RobotSlot], blocked: bool) -> ScheduleDecision:
        ablate = self.opts.ablate
        if ablate is None:
            return schedule(slots, self.gap, reference_returning=blocked)
        ordered = sort_by_remaining_time(slots)
        order = tuple(s.id for s in ordered)
        if ablate == "gware":
            flags = tuple(evaluate_flags(ordered[1:], self.gap))
            return ScheduleDecision(eware(slots), False, order, flags)
        # eware ablated: gware alone; everything else commits whatever it built
        commit_all = tuple(
            RobotDecision(s.id, Action.COMMIT) if s.candidate_soc is not None
            else RobotDecision(s.id, Action.KEEP, land=True, trigger=Trigger.INVALID)
            for s in sorted(slots, key=lambda s: s.id)
        )
        if blocked:
            return ScheduleDecision(commit_all, False, order, tuple(evaluate_flags(ordered, self.gap)), ran_eware=False)
        violation, decisions, flags, order = gware(slots, self.gap)
        if violation:
            return ScheduleDecision(tuple(sorted(decisions, key=lambda d: d.id)), True, order, flags, ran_eware=False)
        return ScheduleDecision(commit_all, False, order, flags, ran_eware=False)

    def _iteration(self, n: int, j: int) -> None:
        wall0 = time.perf_counter()
        t = float(self.log.t[n])
        h = self.s.horizons
        for r in self.robots:
            if r.status is Status.CHARGING and r.charge_end <= n:
                self._relaunch(n, r)

        b_R = propagate_horizon(self.belief, self.charger_model, self.charger_u, h.T_R, self.dt, self.noise)
        mean_target = b_R.mean[:3].copy()
        worst_target = worst_case_state(b_R)[:3]
        rp = mean_target + np.array([0.0, 0.0, self.s.charger.d])
        n_R = n + _steps(h.T_R, self.dt)
        if not self.deterministic and n_R <= self.n_total:
            self.pending_checks.append((n_R, b_R.mean[:2].copy(), b_R.cov[:2, :2].copy()))

        active = [r for r in self.robots if r.status is Status.ACTIVE]
        build = lambda r: self._build_slot(r, t, rp, mean_target, worst_target)  # noqa: E731
        built = list(self.executor.map(build, active)) if self.executor else [build(r) for r in active]
        slots = [b[0] for b in built]
        blocked = self._blocked(n)

        sched0 = time.perf_counter()
        decision = self._decide(slots, blocked) if slots else ScheduleDecision((), False, (), ())
        sched_time = time.perf_counter() - sched0

        by_id = {r.id: (r, cand, reserve) for r, (_, cand, reserve) in zip(active, built)}
        for d in decision.decisions:
            r, cand, reserve = by_id[d.id]
            self._apply(n, j, r, d, cand, reserve)

        self.log.iterations.append({
            "j": j, "t": t, "blocked": blocked, "gap_violation": decision.gap_violation,
            "ran_eware": decision.ran_eware, "order": list(decision.order),
            "T_F": {str(s.id): s.T_F for s in slots},
            "flags": [{"k": f.k, "robot": f.id, "value": f.value, "ok": f.ok} for f in decision.flags],
            "decisions": [{"robot": d.id, "action": d.action.value, "land": d.land, "trigger": d.trigger.value}
                          for d in decision.decisions],
            "reserves": {str(r.id): (None if res is None else res.e_res) for r, (_, _, res) in zip(active, built)},
            "e_land": {str(r.id): (None if res is None else res.e_land) for r, (_, _, res) in zip(active, built)},
            "x_rp": rp.tolist(), "worst_target": worst_target.tolist(),
            "belief_trace_at_R": float(np.trace(b_R.cov)),
            "scheduler_s": sched_time, "wall_s": time.perf_counter() - wall0,
        })

    def _apply(self, n: int, j: int, r: RobotRuntime, d: RobotDecision, cand, reserve) -> None:
        if d.action is Action.COMMIT:
            r.committed = Committed(cand, reserve, n, j)
            r.reserve_floor = r.e_min + reserve.e_res
        elif r.committed is None:
            raise SimulationError(f"robot {r.id} has no trajectory to fall back on at t={self.log.t[n]:.2f}")
        if d.land:
            c = r.committed
            r.status = Status.RETURNING
            r.landing_start = c.start_tick + len(c.traj.controls)
            r.touchdown = r.landing_start + self.n_L

    def _relaunch(self, n: int, r: RobotRuntime) -> None:
        r.e = r.battery.e_max
        r.status = Status.ACTIVE
        r.committed = None
        r.landing_start = r.touchdown = r.charge_end = None
        r.reserve_floor = r.e_min
        r.x = r.plant.hover_state(self.charger[:3])
        r.planner.reset(float(self.log.t[n]), r.plant.position(r.x), np.zeros(3))
        self.log.departures.append({"t": float(self.log.t[n]), "robot": r.id})

    # -- tick --------------------------------------------------------------------

    def _advance_robot(self, n: int, r: RobotRuntime) -> None:
        if r.status is Status.CHARGING:
            r.x = r.plant.hover_state(self.charger[:3])
            return
        if r.status is Status.RETURNING and n >= r.landing_start:
            k = n - r.landing_start
            K = r.gen.terminal_gains(self.n_L)[k:k + 1]
            target = r.plant.hover_state(self.belief.mean[:3])[None]
            xs, _, es = r.plant.rollout(r.x, r.e, target, r.plant.u_bar[None], K, r.battery)
            r.x, r.e = xs[1], float(es[1])
        else:
            c = r.committed
            k = n - c.start_tick
            if k >= len(c.traj.controls):
                raise SimulationError(f"robot {r.id} ran past its committed trajectory at t={self.log.t[n]:.2f}")
            r.x, r.e = c.traj.states[k + 1], float(c.traj.soc[k + 1])
        if r.e < 0.0:
            r.e, r.depleted = 0.0, True
        if r.status is Status.RETURNING and n + 1 == r.touchdown:
            r.status = Status.CHARGING
            r.charge_end = r.touchdown + self.n_ch
            self._on_touchdown(n + 1, r)

    def _advance_charger(self) -> None:
        x = rk4_step(self.charger_model.deriv, self.charger, self.charger_u, self.dt)
        b = ekf_predict(self.belief, self.charger_model, self.charger_u, self.noise, self.dt)
        if self.deterministic:
            y = self.obs(x)
        else:
            x = x + np.sqrt(self.dt) * self.L_W @ self.rng_process.standard_normal(4)
            y = self.obs(x) + self.L_V @ self.rng_measure.standard_normal(self.L_V.shape[0])
        self.charger = x
        self.belief = ekf_update(b, y, self.obs, self.noise.measurement(b.stamp))

    def _check_coverage(self, n: int) -> None:
        while self.pending_checks and self.pending_checks[0][0] == n:
            _, m, S = self.pending_checks.pop(0)
            d = self.charger[:2] - m
            try:
                inside = float(d @ np.linalg.solve(S, d)) <= ELLIPSE_95
            except np.linalg.LinAlgError:
                continue
            self.log.coverage_checks.append(bool(inside))

    def run(self) -> SimLog:
        self._record_tick(0)
        try:
            for n in range(self.n_total):
                if n % self.n_E == 0:
                    self._iteration(n, n // self.n_E)
                for r in self.robots:
                    self._advance_robot(n, r)
                self._advance_charger()
                self._check_coverage(n + 1)
                self._record_tick(n + 1)
        finally:
            if self.executor is not None:
                self.executor.shutdown()
        return self.log


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Square root ``L`` with ``L L' = M`` that tolerates singular ``M``."""
    lam, U = np.linalg.eigh(M)
    return U * np.sqrt(np.clip(lam, 0.0, None))


def run(scenario: Scenario, options: RunOptions | None = None) -> SimLog:
    """Simulate a scenario; see ``RunOptions`` for seed and ablation overrides.

    Raises:
        MonitorViolation: a safety invariant failed and violations are not
            allowed. The partial log is attached to the exception.
    """
    return Simulation(scenario, options).run()
