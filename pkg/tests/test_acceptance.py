"""Release gate: every acceptance criterion at its stated tolerance.

Each test prints one ``PASS``/``FAIL`` line (also echoed in the terminal
summary) and then asserts.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mesch.dynamics import DoubleIntegrator, Quadrotor, controllability_rank, linearize, reduce_attitude
from mesch.ergodic import dynamics_residual
from mesch.scheduler import GapParams, RobotSlot, schedule
from mesch.sim.engine import MonitorViolation, RunOptions, run
from mesch.sim.export import write_ticks_csv
from mesch.sim.metrics import metrics
from mesch.sim.scenario import load_scenario, random_scenario
from mesch.trajgen import QuadrotorPlant, TrajectoryGenerator
from test_ergodic import descent_kkt_error, gradient_relative_error, pto_convergence_run
from test_estimation import charger_monte_carlo
from test_trajgen import b2b_residuals, landing_residuals, lq_track_oracle_error

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def baseline_sweep():
    """Twenty 600 s runs of the four-quadrotor scenario with a stochastic charger."""
    scenario = load_scenario(SCENARIOS / "baseline_4quad.json")
    out = []
    for seed in range(20):
        t0 = time.perf_counter()
        try:
            log = run(scenario, RunOptions(seed=seed))
            out.append((seed, log, metrics(log), time.perf_counter() - t0))
        except MonitorViolation as exc:
            out.append((seed, exc.log, metrics(exc.log), time.perf_counter() - t0))
    return out


def test_c01_exclusive_use(baseline_sweep):
    co = [m["co_occupancy_events"] for _, _, m, _ in baseline_sweep]
    gaps = [m["min_inter_return_gap_s"] for _, _, m, _ in baseline_sweep]
    walls = [w for *_, w in baseline_sweep]
    ok = all(c == 0 for c in co) and all(g > 15.0 for g in gaps) and max(walls) < 120.0
    report(1, "exclusive use", ok,
           f"{len(baseline_sweep)} seeds, co-occupancy total {sum(co)}, worst min gap {min(gaps):.2f} s (> 15), "
           f"slowest seed {max(walls):.1f} s (< 120)")


def test_c02_reserve_soc(baseline_sweep):
    worst = min(float(np.min(log.soc - log.reserve_floor)) for _, log, _, _ in baseline_sweep)
    ok = all(bool(np.all(log.soc >= log.reserve_floor)) for _, log, _, _ in baseline_sweep)
    report(2, "SoC >= e_min + e_res", ok, f"every tick of {len(baseline_sweep)} seeds, worst margin {worst:.4f}")


def test_c03_deterministic_reserve():
    log = run(load_scenario(SCENARIOS / "baseline_4quad.json"), RunOptions(seed=0, deterministic_charger=True))
    reserves = [v for it in log.iterations for v in it["reserves"].values() if v is not None]
    ok = len(reserves) > 0 and all(v == 0.0 for v in reserves)
    report(3, "deterministic-charger reserve", ok, f"{len(reserves)} logged reserves, max {max(reserves):g}")


def test_c04_ablations():
    scenario = load_scenario(SCENARIOS / "ablation_hetero.json")
    co_seeds, depleted_seeds = 0, 0
    for seed in range(5):
        if metrics(run(scenario, RunOptions(seed=seed, ablate="gware")))["co_occupancy_events"] >= 1:
            co_seeds += 1
        if metrics(run(scenario, RunOptions(seed=seed, ablate="eware")))["robots_below_e_min"]:
            depleted_seeds += 1
    ok = co_seeds >= 1 and depleted_seeds >= 1
    report(4, "ablations", ok, f"gware ablated: co-occupancy on {co_seeds}/5 seeds; "
           f"eware ablated: SoC < e_min on {depleted_seeds}/5 seeds")


def test_c05_monitor_random_scenarios():
    violations, sizes = [], []
    for seed in range(50):
        scenario = random_scenario(seed)
        sizes.append(len(scenario.robots))
        try:
            run(scenario)
        except MonitorViolation as exc:
            violations.append((seed, exc.violation["kind"]))
    report(5, "monitor on random scenarios", not violations,
           f"50 seeds with {min(sizes)}-{max(sizes)} robots, violations {violations or 0}")


def test_c06_controllability():
    model = Quadrotor()
    lin = linearize(model, *model.hover())
    red = reduce_attitude(lin)
    reduced, full = controllability_rank(red.A, red.B), controllability_rank(lin.A, lin.B)
    report(6, "controllability", reduced == 12 and full < 13, f"reduced rank {reduced} (== 12), full rank {full} (< 13)")


def test_c07_pto_convergence():
    res, obj, elapsed = pto_convergence_run()
    residual = dynamics_residual(res.trajectory, DoubleIntegrator(2))
    monotone = bool(np.all(np.diff(obj) <= 0))
    ok = monotone and obj[-1] < 0.5 * obj[0] and residual < 1e-8 and elapsed < 30.0
    report(7, "PTO convergence", ok, f"monotone {monotone}, final/initial {obj[-1] / obj[0]:.3f} (< 0.5), "
           f"residual {residual:.1e} (< 1e-8), {elapsed:.2f} s (< 30)")


def test_c08_riccati_oracles():
    kkt = [descent_kkt_error(s) for s in range(50)]
    track = [lq_track_oracle_error(s) for s in range(50)]
    errs = kkt + track
    report(8, "LQ vs dense KKT", max(errs) < 1e-7, f"50 descent + 50 tracking instances, max abs error {max(errs):.1e} (< 1e-7)")


def test_c09_gradients():
    errs = [gradient_relative_error(s) for s in range(20)]
    report(9, "gradient check", max(errs) < 1e-4, f"20 trajectories, max relative error {max(errs):.1e} (< 1e-4)")


def test_c10_ekf_calibration():
    rel, coverage = charger_monte_carlo()
    report(10, "EKF Monte Carlo", rel < 0.10 and coverage >= 0.93,
           f"covariance Frobenius error {rel:.3f} (< 0.10), 95% interval coverage {coverage:.4f} (>= 0.93)")


def test_c11_terminal_residuals():
    gen = TrajectoryGenerator.for_plant(QuadrotorPlant(dt=0.05))
    b2b, land = b2b_residuals(gen, 100), landing_residuals(gen, 100)
    ok = b2b.max() < 1e-3 and land.max() < 1e-3
    report(11, "terminal residuals", ok, f"100 b2b max {b2b.max():.1e} m, 100 landings max {land.max():.1e} m (< 1e-3)")


def _timing_slots(n: int, rng) -> list[RobotSlot]:
    # staggered remaining times so every flag passes and eware runs too
    T_F = 40.0 + 20.0 * np.arange(n) + rng.uniform(0, 1, n)
    return [RobotSlot(i, float(T_F[p]), np.linspace(90.0, 80.0, 241), 15.0, True)
            for i, p in enumerate(rng.permutation(n))]


def _median_schedule_time(n: int, reps: int = 400) -> float:
    params = GapParams(0.0, 15.0, 6.0, 12.0, T_E=2.0, margin=2.0)
    rng = np.random.default_rng(n)
    sets = [_timing_slots(n, rng) for _ in range(20)]
    samples = []
    for r in range(reps):
        slots = sets[r % len(sets)]
        t0 = time.perf_counter()
        schedule(slots, params)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def test_c12_scalability():
    log = run(load_scenario(SCENARIOS / "scale_32_di.json"))
    m = metrics(log)
    _median_schedule_time(16, 50)  # warm up
    t16, t32 = _median_schedule_time(16), _median_schedule_time(32)
    ratio = t32 / t16
    ok = m["monitor_violations"] == 0 and log.t[-1] == pytest.approx(600.0) and ratio < 2.4
    report(12, "scalability", ok, f"32 double integrators ran 600 s with {m['monitor_violations']} violations, "
           f"{m['total_returns']} returns; scheduler median {t16 * 1e6:.0f} us (N=16) vs {t32 * 1e6:.0f} us (N=32), "
           f"ratio {ratio:.2f} (< 2.4)")


def test_c13_determinism(tmp_path):
    scenario = load_scenario(SCENARIOS / "baseline_4quad.json")
    paths = []
    for tag, threads in (("a", 1), ("b", 1), ("c", 2)):
        p = tmp_path / f"{tag}.csv"
        write_ticks_csv(run(scenario, RunOptions(seed=123, duration=200.0, threads=threads)), p)
        paths.append(p.read_bytes())
    same_runs, same_threads = paths[0] == paths[1], paths[0] == paths[2]
    report(13, "determinism", same_runs and same_threads,
           f"two runs identical {same_runs}, threads 1 vs 2 identical {same_threads} ({len(paths[0])} bytes)")
