"""Command-line entry point: ``mesch run | metrics | sweep | plot | schema``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

from .sim.engine import MonitorViolation, RunOptions, run
from .sim.export import ExportError, export, load_log, render_png
from .sim.metrics import metrics
from .sim.scenario import ScenarioError, json_schema, load_scenario

log = logging.getLogger("mesch")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _options(args, seed=None) -> RunOptions:
    return RunOptions(
        seed=args.seed if seed is None else seed,
        deterministic_charger=True if args.deterministic_charger else None,
        ablate=args.ablate,
        duration=args.duration,
        allow_violations=args.allow_violations,
        threads=args.threads,
    )


def _summary_line(m: dict) -> str:
    gap = m["min_inter_return_gap_s"]
    gap_s = "inf" if math.isinf(gap) else f"{gap:.2f}"
    return (f"seed {m['seed']}: returns {m['total_returns']}, min gap {gap_s} s, "
            f"min SoC-reserve margin {m['min_soc_margin_above_reserve']:.3f}, "
            f"co-occupancy {m['co_occupancy_events']}, violations {m['monitor_violations']}")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    t0 = time.perf_counter()
    status = 0
    try:
        result = run(scenario, _options(args))
    except MonitorViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        result, status = exc.log, 3
    written = export(result, args.out, formats=("csv", "json", "gnuplot") + (("png",) if args.png else ()))
    m = metrics(result)
    print(_summary_line(m))
    print(f"wrote {', '.join(str(p) for p in written.values())} in {time.perf_counter() - t0:.1f} s")
    return status


def cmd_metrics(args) -> int:
    m = metrics(load_log(args.log_dir))
    print(json.dumps(m, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    failed = 0
    rows = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        try:
            result = run(scenario, _options(args, seed=seed))
        except MonitorViolation as exc:
            failed += 1
            print(f"seed {seed}: aborted, {exc}")
            continue
        m = metrics(result)
        rows.append(m)
        print(_summary_line(m), flush=True)
        if args.out:
            export(result, Path(args.out) / f"seed_{seed}")
    gaps = [m["min_inter_return_gap_s"] for m in rows]
    print(f"{len(rows)} of {args.seeds} seeds completed; worst min gap "
          f"{min(gaps, default=math.inf):.2f} s; aborted {failed}")
    return 1 if failed else 0


def cmd_plot(args) -> int:
    path = render_png(load_log(args.log_dir), Path(args.log_dir) / "plot.png")
    print(f"wrote {path}")
    return 0


def cmd_schema(args) -> int:
    text = json.dumps(json_schema(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--deterministic-charger", action="store_true", help="drop all charger noise")
    p.add_argument("--ablate", choices=("gware", "eware"), help="disable one scheduler stage")
    p.add_argument("--duration", type=float, help="override the scenario duration [s]")
    p.add_argument("--allow-violations", action="store_true", help="log monitor violations instead of aborting")
    p.add_argument("--threads", type=int, default=1, help="worker threads for candidate generation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesch", description="Energy-aware multi-robot recharge scheduling")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write its logs")
    _add_run_flags(p)
    p.add_argument("--seed", type=_u64, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--png", action="store_true", help="also render plot.png with matplotlib")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="print the metrics of a log directory")
    p.add_argument("log_dir")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="run a scenario over consecutive seeds")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--first-seed", type=_u64, default=0)
    p.add_argument("--out", help="write each seed's logs under this directory")
    p.set_defaults(func=cmd_sweep, seed=None)

    p = sub.add_parser("plot", help="render plot.png for a log directory")
    p.add_argument("log_dir")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("schema", help="print the scenario JSON schema")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ExportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
