import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesch.cli import main
from mesch.scheduler import GapParams, gap_flag
from mesch.sim.engine import STATUS_CODES, MonitorViolation, RunOptions, Status, run
from mesch.sim.export import TICK_COLUMNS, ExportError, export, load_log
from mesch.sim.metrics import executed_ergodicity, metrics, min_inter_return_gap
from mesch.sim.planners import CircleNominal, WaypointNominal, build_planner
from mesch.sim.scenario import (
    ConsistencyError,
    Horizons,
    ScenarioError,
    build_scenario,
    formation_scenario,
    json_schema,
    load_scenario,
    random_scenario,
    staggered_soc,
)

ROOT = Path(__file__).resolve().parents[1]
BASELINE = ROOT / "scenarios" / "baseline_4quad.json"


def minimal(**over):
    d = {"name": "t", "robots": [{"id": 0, "initial": {"position": [5, 5, 2], "soc": 90}}]}
    d.update(over)
    return d


@pytest.fixture(scope="module")
def baseline():
    return load_scenario(BASELINE)


@pytest.fixture(scope="module")
def short_log(baseline):
    return run(baseline, RunOptions(seed=5, duration=90.0))


class TestLoad:
    def test_baseline_scenario(self, baseline):
        assert len(baseline.robots) == 4
        assert tuple(baseline.domain) == (10.0, 10.0)
        assert all(r.battery.k_d == 0.667 for r in baseline.robots)
        h = baseline.horizons
        assert (h.T_N, h.T_B, h.T_C, h.T_R, h.T_E, h.T_ch, h.T_delta) == (2, 10, 12, 18, 2, 0, 15)

    def test_shipped_scenarios_load(self):
        for path in (ROOT / "scenarios").glob("*.json"):
            assert load_scenario(path).robots

    def test_empty_robots(self):
        with pytest.raises(ScenarioError, match="robots"):
            build_scenario(minimal(robots=[]))

    def test_T_R_inconsistent(self):
        with pytest.raises(ConsistencyError, match="T_R"):
            build_scenario(minimal(horizons={"T_R": 20.0, "T_L": 6.0}))

    def test_T_C_inconsistent(self):
        with pytest.raises(ConsistencyError, match="T_C"):
            build_scenario(minimal(horizons={"T_C": 11.0, "T_R": 17.0}))

    def test_error_names_field(self):
        with pytest.raises(ScenarioError, match=r"robots\.0\.initial\.soc"):
            build_scenario(minimal(robots=[{"id": 0, "initial": {"position": [5, 5, 2], "soc": "full"}}]))

    def test_unknown_field_rejected(self):
        with pytest.raises(ScenarioError, match="colour"):
            build_scenario(minimal(colour="red"))

    def test_duplicate_ids(self):
        r = {"id": 1, "initial": {"position": [5, 5, 2], "soc": 90}}
        with pytest.raises(ConsistencyError, match="duplicate"):
            build_scenario(minimal(robots=[r, r]))

    def test_soc_out_of_range(self):
        with pytest.raises(ConsistencyError):
            build_scenario(minimal(robots=[{"id": 0, "initial": {"position": [5, 5, 2], "soc": 5}}]))

    def test_planar_charger_padded(self):
        s = build_scenario(minimal(charger={"initial": [1.0, 2.0, 0.3], "W": [0.1, 0.2, 0.3]}))
        np.testing.assert_array_equal(s.charger.state(), [1.0, 2.0, 0.0, 0.3])
        np.testing.assert_array_equal(np.diag(s.charger.process_cov()), [0.1, 0.2, 0.0, 0.3])

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ScenarioError, match="nope.json"):
            load_scenario(tmp_path / "nope.json")

    def test_bad_json_names_path(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(ScenarioError, match="bad.json"):
            load_scenario(p)

    def test_schema(self):
        assert "robots" in json_schema()["properties"]


class TestGenerators:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32), st.integers(2, 6))
    def test_staggered_soc_passes_every_flag(self, seed, n):
        rng = np.random.default_rng(seed)
        k = rng.uniform(0.3, 0.7, n)
        soc = staggered_soc(k, rng)
        h = Horizons()
        params = GapParams(h.T_ch, h.T_delta, h.landing, h.T_C, T_E=h.T_E, margin=2.0)
        # remaining time with the padding reserved for the landing
        T_F = np.sort((soc - 10.0) / k - 3.0)
        assert all(gap_flag(T_F[i], i, params) for i in range(1, n))
        assert np.all(soc <= 100.0) and np.all(soc >= 10.0)

    def test_infeasible_fleet(self):
        with pytest.raises(ValueError):
            staggered_soc(np.full(8, 0.7), np.random.default_rng(0))

    def test_random_scenario_reproducible(self):
        a, b = random_scenario(11), random_scenario(11)
        assert a == b and 2 <= len(a.robots) <= 6

    def test_formation_round_trips(self):
        d = formation_scenario(10, "double-integrator", seed=3)
        s = build_scenario(json.loads(json.dumps(d)))
        assert len(s.robots) == 10 and all(r.model == "double-integrator" for r in s.robots)


class TestPlanners:
    def test_circle_starts_where_reset(self):
        p = CircleNominal([5, 5], 2.0, 0.5, 2.0, blend_time=4.0)
        p.reset(3.0, [7.0, 5.0, 2.0])
        pos, vel = p.sample(3.0, 10, 0.05)
        np.testing.assert_allclose(pos[0], [7, 5, 2], atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(vel[:, :2], axis=1), 0.5, rtol=1e-12)

    def test_blend_removes_offset(self):
        p = CircleNominal([5, 5], 2.0, 0.5, 2.0, blend_time=4.0)
        p.reset(0.0, [5.0, 5.0, 0.0])
        pos, _ = p.sample(0.0, 100, 0.05)
        np.testing.assert_allclose(pos[0], [5, 5, 0], atol=1e-12)
        assert abs(np.linalg.norm(pos[-1, :2] - 5.0) - 2.0) < 1e-12 and pos[-1, 2] == 2.0

    def test_velocity_is_position_derivative(self):
        p = CircleNominal([5, 5], 2.0, 0.5, 2.0, blend_time=4.0)
        p.reset(0.0, [4.0, 4.0, 1.0])
        h = 1e-5
        pos, vel = p.sample(1.3, 1, h)
        np.testing.assert_allclose((pos[1] - pos[0]) / h, vel[0], atol=1e-4)

    def test_waypoint_loop(self):
        p = WaypointNominal([[0, 0, 2], [2, 0, 2], [2, 2, 2], [0, 2, 2]], speed=1.0, blend_time=0.0)
        p.reset(0.0, [2, 0, 2])
        pos, vel = p.sample(0.0, 8, 1.0)
        np.testing.assert_allclose(pos[0], [2, 0, 2])
        np.testing.assert_allclose(pos[2], [2, 2, 2])
        np.testing.assert_allclose(pos[8], [2, 0, 2], atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(vel, axis=1), 1.0)

    def test_waypoint_rejects_repeats(self):
        with pytest.raises(ValueError):
            WaypointNominal([[0, 0, 2], [0, 0, 2]], 1.0)

    def test_ergodic_replans_and_stays_near_domain(self, baseline):
        p = build_planner(baseline.planner, baseline)
        p.reset(0.0, [2.0, 2.0, 2.0], np.zeros(3))
        pts = np.vstack([p.sample(t, 40, 0.05)[0] for t in np.arange(0.0, 80.0, 2.0)])
        assert p.replans >= 3
        assert pts[:, :2].min() > -0.5 and pts[:, :2].max() < 10.5
        np.testing.assert_allclose(pts[:, 2], 2.0)

    def test_ergodic_breaks_diagonal_symmetry(self, baseline):
        # a start on the diagonal must not stay on it
        p = build_planner(baseline.planner, baseline)
        p.reset(0.0, [2.0, 2.0, 2.0], np.zeros(3))
        pos, _ = p.sample(0.0, 400, 0.05)
        assert np.max(np.abs(pos[:, 0] - pos[:, 1])) > 0.5


class TestMetrics:
    def test_gap_arithmetic(self):
        assert min_inter_return_gap([100.0, 130.0]) == 30.0
        assert min_inter_return_gap([130.0, 100.0, 170.0]) == 30.0

    def test_gap_sentinel(self):
        assert min_inter_return_gap([]) == math.inf
        assert min_inter_return_gap([42.0]) == math.inf

    def test_ergodicity_of_uniform_sweep_is_small(self):
        g = (np.arange(100) + 0.5) / 10
        xy = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        assert executed_ergodicity(xy, (10, 10)) < 1e-6
        assert executed_ergodicity(np.full((50, 2), 3.0), (10, 10)) > 1e-2

    def test_report(self, short_log):
        m = metrics(short_log)
        assert m["min_inter_return_gap_s"] > 15.0 and m["co_occupancy_events"] == 0
        assert m["monitor_violations"] == 0 and m["reserve_ok"]
        assert sum(m["returns_per_robot"].values()) == len(short_log.returns)
        assert m["iterations"] == 45


class TestRun:
    def test_ticks_strictly_increasing(self, short_log):
        assert np.all(np.diff(short_log.t) > 0)
        assert short_log.t[-1] == pytest.approx(90.0)

    def test_returns_matched_by_departure_or_end(self, short_log):
        for ev in short_log.returns:
            later = [d for d in short_log.departures if d["robot"] == ev["robot"] and d["t"] >= ev["t"]]
            charging_at_end = short_log.status[-1, short_log.robot_ids.index(ev["robot"])] == STATUS_CODES[Status.CHARGING]
            assert later or charging_at_end

    def test_one_robot_at_station(self, short_log):
        charging = short_log.status == STATUS_CODES[Status.CHARGING]
        assert charging.sum(axis=1).max() <= 1

    def test_same_seed_identical(self, baseline):
        a = run(baseline, RunOptions(seed=9, duration=20.0))
        b = run(baseline, RunOptions(seed=9, duration=20.0))
        for name in ("soc", "pos", "charger", "belief_mean", "reserve_floor", "status"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_different_seed_changes_charger(self, baseline):
        a = run(baseline, RunOptions(seed=1, duration=4.0))
        b = run(baseline, RunOptions(seed=2, duration=4.0))
        assert not np.array_equal(a.charger, b.charger)

    def test_deterministic_charger_zero_reserve(self, baseline):
        log = run(baseline, RunOptions(seed=3, duration=30.0, deterministic_charger=True))
        res = [v for it in log.iterations for v in it["reserves"].values()]
        assert res and all(v == 0.0 for v in res)
        assert np.all(log.belief_trace == 0.0)

    def test_infeasible_start_aborts(self, tmp_path):
        # two robots that must both land at once: no schedule can separate them
        r = lambda i, x: {"id": i, "initial": {"position": [x, 5, 2], "soc": 23.0},  # noqa: E731
                          "planner": {"kind": "circle", "center": [x, 4], "radius": 1.0, "speed": 0.4}}
        s = build_scenario({"name": "doomed", "duration": 60.0, "robots": [r(0, 3.0), r(1, 7.0)]})
        with pytest.raises(MonitorViolation) as info:
            run(s)
        assert info.value.log.n_ticks < 1201
        assert info.value.violation["kind"] in ("soc-below-min", "co-occupancy", "return-gap")

    def test_options_validated(self):
        with pytest.raises(ValueError):
            RunOptions(ablate="both")
        with pytest.raises(ValueError):
            RunOptions(threads=0)


class TestExport:
    def test_files_and_header(self, short_log, tmp_path):
        written = export(short_log, tmp_path)
        header = (tmp_path / "ticks.csv").read_text().splitlines()[0]
        assert header.startswith("t,robot_id,soc,status,dist_to_charger,")
        assert header == ",".join(TICK_COLUMNS)
        assert "min_inter_return_gap_s" in json.loads((tmp_path / "metrics.json").read_text())
        assert set(written) == {"ticks", "iterations", "events", "metrics", "plot"}
        assert "ticks.csv" in (tmp_path / "plot.gp").read_text()

    def test_round_trip(self, short_log, tmp_path):
        export(short_log, tmp_path)
        back = load_log(tmp_path)
        for name in ("t", "soc", "status", "dist", "pos", "reserve_floor", "charger", "belief_mean", "belief_trace"):
            np.testing.assert_array_equal(getattr(back, name), getattr(short_log, name), err_msg=name)
        assert back.iterations == short_log.iterations
        assert back.returns == short_log.returns
        assert metrics(back) == metrics(short_log)

    def test_infinite_gap_written(self, baseline, tmp_path):
        log = run(baseline, RunOptions(seed=0, duration=4.0))
        export(log, tmp_path, formats=("json",))
        assert json.loads((tmp_path / "metrics.json").read_text())["min_inter_return_gap_s"] == math.inf

    def test_unwritable_target_names_path(self, short_log, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ExportError, match="file"):
            export(short_log, blocker / "sub")

    def test_missing_log_dir(self, tmp_path):
        with pytest.raises(ExportError, match="events.json"):
            load_log(tmp_path)


class TestCli:
    def test_run_and_metrics(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["run", "--scenario", str(BASELINE), "--seed", "4", "--out", str(out), "--duration", "6"]) == 0
        assert (out / "ticks.csv").exists()
        capsys.readouterr()
        assert main(["metrics", str(out)]) == 0
        assert json.loads(capsys.readouterr().out)["seed"] == 4

    def test_bad_scenario_exit_code(self, tmp_path, capsys):
        assert main(["run", "--scenario", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 2
        assert "x.json" in capsys.readouterr().err

    def test_schema_command(self, tmp_path):
        assert main(["schema", "--out", str(tmp_path / "s.json")]) == 0
        assert "robots" in json.loads((tmp_path / "s.json").read_text())["properties"]

    def test_seed_must_fit_u64(self):
        with pytest.raises(SystemExit):
            main(["run", "--scenario", "x", "--out", "y", "--seed", str(2**64)])


def test_belief_ellipse_calibration(baseline):
    # pooled over 50 seeds the true charger sits inside the propagated 95% ellipse
    checks = []
    for seed in range(50):
        checks += run(baseline, RunOptions(seed=seed, duration=60.0)).coverage_checks
    assert len(checks) > 1000
    assert np.mean(checks) >= 0.93
