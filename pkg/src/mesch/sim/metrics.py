"""Summary statistics of a simulation log."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from ..ergodic import CoverageDomain, trajectory_coefficients, uniform_density

SOC_TOL = 1e-9


def min_inter_return_gap(return_times) -> float:
    """Smallest spacing between consecutive returns; ``inf`` with fewer than two."""
    t = np.sort(np.asarray(list(return_times), dtype=float))
    if len(t) < 2:
        return math.inf
    return float(np.min(np.diff(t)))


def executed_ergodicity(xy: np.ndarray, lengths, K: int = 10) -> float:
    """Ergodic metric of a sampled planar path against the uniform density."""
    domain = CoverageDomain(tuple(float(v) for v in lengths))
    density = uniform_density(domain, K)
    xy = np.clip(xy, 0.0, np.asarray(domain.lengths))
    c = trajectory_coefficients(xy, domain, K)
    return float(np.sum(density.weights() * (c - density.phi) ** 2))


def metrics(log) -> dict:
    """Report on a run.

    Args:
        log: a ``SimLog`` fresh from the engine or rebuilt by ``load_log``.

    Returns:
        JSON-ready dict. ``min_inter_return_gap_s`` is ``inf`` when fewer
        than two returns happened.
    """
    ids = list(log.robot_ids)
    e_min = np.array([log.e_min[i] for i in ids])
    soc_margin = log.soc - e_min[None, :]
    reserve_margin = log.soc - log.reserve_floor
    returns = Counter(ev["robot"] for ev in log.returns)
    active = log.status == 0

    ergodic = {}
    for col, rid in enumerate(ids):
        xy = log.pos[active[:, col], col, :2]
        ergodic[str(rid)] = executed_ergodicity(xy, log.density_domain) if len(xy) else None
    team_xy = log.pos[:, :, :2][active]
    walls = np.array([it["wall_s"] for it in log.iterations]) if log.iterations else np.zeros(0)
    sched = np.array([it["scheduler_s"] for it in log.iterations]) if log.iterations else np.zeros(0)
    reserves = [v for it in log.iterations for v in it["reserves"].values() if v is not None]
    gap = min_inter_return_gap(ev["t"] for ev in log.returns)

    return {
        "scenario": log.scenario,
        "seed": log.seed,
        "duration_s": float(log.t[-1]),
        "n_robots": len(ids),
        "min_inter_return_gap_s": gap,
        "required_gap_s": log.min_gap_required,
        "gap_ok": bool(gap > log.min_gap_required),
        "min_soc_margin_above_e_min": float(soc_margin.min()),
        "min_soc_margin_above_reserve": float(reserve_margin.min()),
        "reserve_ok": bool(reserve_margin.min() >= -SOC_TOL),
        "robots_below_e_min": [rid for col, rid in enumerate(ids) if soc_margin[:, col].min() < -SOC_TOL],
        "co_occupancy_events": int(log.co_occupancy_events),
        "returns_per_robot": {str(rid): returns.get(rid, 0) for rid in ids},
        "total_returns": len(log.returns),
        "monitor_violations": len(log.violations),
        "violation_kinds": dict(Counter(v["kind"] for v in log.violations)),
        "max_reserve": max(reserves, default=0.0),
        "all_reserves_zero": all(v == 0.0 for v in reserves),
        "gap_violation_iterations": sum(1 for it in log.iterations if it["gap_violation"]),
        "ergodic_metric_per_robot": ergodic,
        "ergodic_metric_team": executed_ergodicity(team_xy, log.density_domain) if len(team_xy) else None,
        "iterations": len(log.iterations),
        "wall_per_iteration_s": {"mean": float(walls.mean()) if len(walls) else 0.0,
                                 "max": float(walls.max()) if len(walls) else 0.0},
        "scheduler_per_iteration_s": {"mean": float(sched.mean()) if len(sched) else 0.0,
                                      "median": float(np.median(sched)) if len(sched) else 0.0},
        "belief_coverage_checks": len(log.coverage_checks),
        "belief_coverage_fraction": (float(np.mean(log.coverage_checks)) if log.coverage_checks else None),
    }
