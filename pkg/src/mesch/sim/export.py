"""Writing a run to disk and reading it back.

A log directory holds:

* ``ticks.csv``: one row per (tick, robot), columns in ``TICK_COLUMNS`` order,
  floats written with 17 significant digits so parsing is lossless;
* ``iterations.json``: per-round scheduler records;
* ``events.json``: returns, departures, monitor violations and run metadata;
* ``metrics.json``: the ``metrics`` report;
* ``plot.gp``: a gnuplot script drawing SoC, distance to the station and
  the XY paths from ``ticks.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .engine import STATUS_CODES, STATUS_NAMES, SimLog
from .metrics import metrics

TICK_COLUMNS = (
    "t", "robot_id", "soc", "status", "dist_to_charger", "x", "y", "z", "reserve_floor",
    "charger_x", "charger_y", "charger_z", "charger_theta",
    "belief_x", "belief_y", "belief_z", "belief_theta", "belief_trace",
)
_CODE_OF = {s.value: c for s, c in STATUS_CODES.items()}


class ExportError(OSError):
    pass


def _g(v: float) -> str:
    return format(float(v), ".17g")


def tick_rows(log: SimLog):
    """Yield CSV rows in tick-major, robot-id-minor order."""
    for n in range(log.n_ticks):
        head = _g(log.t[n])
        tail = [_g(v) for v in log.charger[n]] + [_g(v) for v in log.belief_mean[n]] + [_g(log.belief_trace[n])]
        for col, rid in enumerate(log.robot_ids):
            p = log.pos[n, col]
            yield [head, str(rid), _g(log.soc[n, col]), STATUS_NAMES[int(log.status[n, col])],
                   _g(log.dist[n, col]), _g(p[0]), _g(p[1]), _g(p[2]), _g(log.reserve_floor[n, col]), *tail]


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _json(obj) -> str:
    # inf is legal for the gap sentinel; json emits it as Infinity
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_ticks_csv(log: SimLog, path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TICK_COLUMNS)
    w.writerows(tick_rows(log))
    _write_text(path, buf.getvalue())


def _meta(log: SimLog) -> dict:
    return {
        "scenario": log.scenario, "seed": log.seed, "dt": log.dt, "robot_ids": log.robot_ids,
        "e_min": {str(k): v for k, v in log.e_min.items()}, "returns": log.returns,
        "departures": log.departures, "violations": log.violations, "coverage_checks": log.coverage_checks,
        "co_occupancy_events": log.co_occupancy_events, "min_gap_required": log.min_gap_required,
        "options": log.options, "density_domain": list(log.density_domain),
    }


def export(log: SimLog, out_dir, formats=("csv", "json", "gnuplot")) -> dict[str, Path]:
    """Write the requested artifacts of a run into ``out_dir``.

    Args:
        formats: any of ``"csv"``, ``"json"``, ``"gnuplot"``, ``"png"``. The
            PNG needs matplotlib.

    Returns:
        Mapping of artifact name to written path.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = {}
    if "csv" in formats:
        written["ticks"] = out / "ticks.csv"
        write_ticks_csv(log, written["ticks"])
    if "json" in formats:
        for name, payload in (("iterations", log.iterations), ("events", _meta(log)), ("metrics", metrics(log))):
            written[name] = out / f"{name}.json"
            _write_text(written[name], _json(payload))
    if "gnuplot" in formats:
        written["plot"] = out / "plot.gp"
        _write_text(written["plot"], gnuplot_script(log.robot_ids))
    if "png" in formats:
        written["png"] = render_png(log, out / "plot.png")
    return written


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_log(log_dir) -> SimLog:
    """Rebuild a ``SimLog`` from a directory written by ``export``."""
    d = Path(log_dir)
    meta = json.loads(_read(d / "events.json"))
    iterations = json.loads(_read(d / "iterations.json"))
    rows = list(csv.reader(io.StringIO(_read(d / "ticks.csv"))))
    header, body = rows[0], rows[1:]
    if tuple(header) != TICK_COLUMNS:
        raise ExportError(f"{d / 'ticks.csv'}: unexpected header {header}")
    ids = [int(i) for i in meta["robot_ids"]]
    R = len(ids)
    if R == 0 or len(body) % R:
        raise ExportError(f"{d / 'ticks.csv'}: row count {len(body)} is not a multiple of {R} robots")
    n = len(body) // R
    col = {name: i for i, name in enumerate(TICK_COLUMNS)}
    status = np.array([[_CODE_OF[r[col["status"]]] for r in body]], dtype=np.int8).reshape(n, R)
    num = np.array([[float(v) for k, v in enumerate(r) if k != col["status"]] for r in body]).reshape(n, R, -1)
    ncol = {name: i for i, name in enumerate(c for c in TICK_COLUMNS if c != "status")}

    def field(name):
        return num[:, :, ncol[name]]

    charger = np.stack([field(f"charger_{a}")[:, 0] for a in "xyz"] + [field("charger_theta")[:, 0]], axis=1)
    belief = np.stack([field(f"belief_{a}")[:, 0] for a in "xyz"] + [field("belief_theta")[:, 0]], axis=1)
    return SimLog(
        scenario=meta["scenario"], seed=meta["seed"], dt=meta["dt"], robot_ids=ids,
        e_min={int(k): v for k, v in meta["e_min"].items()},
        t=field("t")[:, 0].copy(), soc=field("soc").copy(), status=status, dist=field("dist_to_charger").copy(),
        pos=np.stack([field("x"), field("y"), field("z")], axis=2), reserve_floor=field("reserve_floor").copy(),
        charger=charger, belief_mean=belief, belief_trace=field("belief_trace")[:, 0].copy(),
        iterations=iterations, returns=meta["returns"], departures=meta["departures"],
        violations=meta["violations"], coverage_checks=meta["coverage_checks"],
        co_occupancy_events=meta["co_occupancy_events"], min_gap_required=meta["min_gap_required"],
        options=meta["options"], density_domain=tuple(meta["density_domain"]),
    )


def gnuplot_script(robot_ids) -> str:
    """Three-panel gnuplot script that reads ``ticks.csv`` next to it."""
    ids = " ".join(str(i) for i in robot_ids)
    return f"""# usage: gnuplot plot.gp   (writes plot.png next to ticks.csv)
set datafile separator ","
set terminal pngcairo size 1400,1000
set output "plot.png"
ids = "{ids}"
set multiplot layout 2,2
set key outside right
set title "State of charge"
set xlabel "t [s]"; set ylabel "SoC"
plot for [i in ids] "ticks.csv" using 1:(column(2)==i+0 ? column(3) : 1/0) with lines title "robot ".i, \\
     for [i in ids] "ticks.csv" using 1:(column(2)==i+0 ? column(9) : 1/0) with lines dt 2 lc rgb "gray" notitle
set title "Distance to charger"
set ylabel "m"
plot for [i in ids] "ticks.csv" using 1:(column(2)==i+0 ? column(5) : 1/0) with lines title "robot ".i
set title "XY paths"
set xlabel "x [m]"; set ylabel "y [m]"
set size ratio -1
plot for [i in ids] "ticks.csv" using (column(2)==i+0 ? column(6) : 1/0):7 with lines title "robot ".i, \\
     "ticks.csv" using 10:11 every {max(1, len(list(robot_ids)))} with lines lw 2 lc rgb "black" title "charger"
unset multiplot
"""


def render_png(log: SimLog, path: Path) -> Path:
    """Matplotlib rendering of the same panels as ``plot.gp``."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ExportError("PNG output needs matplotlib (pip install 'artifact[plot]')") from exc
    fig, axes = plt.subplots(2, 2, figsize=(14, 10))
    for col, rid in enumerate(log.robot_ids):
        line, = axes[0, 0].plot(log.t, log.soc[:, col], label=f"robot {rid}")
        axes[0, 0].plot(log.t, log.reserve_floor[:, col], "--", color=line.get_color(), lw=0.8)
        axes[0, 1].plot(log.t, log.dist[:, col], color=line.get_color())
        axes[1, 0].plot(log.pos[:, col, 0], log.pos[:, col, 1], color=line.get_color(), lw=0.8)
    axes[1, 0].plot(log.charger[:, 0], log.charger[:, 1], "k", lw=2, label="charger")
    for ev in log.returns:
        axes[0, 1].axvline(ev["t"], color="gray", lw=0.4)
    axes[0, 0].set(title="State of charge", xlabel="t [s]", ylabel="SoC")
    axes[0, 1].set(title="Distance to charger", xlabel="t [s]", ylabel="m")
    axes[1, 0].set(title="XY paths", xlabel="x [m]", ylabel="y [m]", aspect="equal")
    axes[1, 1].axis("off")
    m = metrics(log)
    gap = m["min_inter_return_gap_s"]
    axes[1, 1].text(0.0, 0.9, "\n".join([
        f"returns: {m['total_returns']}",
        f"min inter-return gap: {'none' if math.isinf(gap) else f'{gap:.2f} s'}",
        f"min SoC above reserve floor: {m['min_soc_margin_above_reserve']:.3f}",
        f"co-occupancy events: {m['co_occupancy_events']}",
        f"monitor violations: {m['monitor_violations']}",
    ]), va="top", family="monospace")
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=100)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    finally:
        plt.close(fig)
    return path
