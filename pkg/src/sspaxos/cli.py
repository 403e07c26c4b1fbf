"""Command-line scenario runner.

``sspaxos run scenario.toml`` executes one simulation per seed and writes,
for each seed, ``trace.jsonl`` (one line per event), ``annotations.jsonl``
(monitor findings) and ``report.json`` into the output directory.  The exit
status is 0 when every run is clean, 1 when any run reports a violation and
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional

from .errors import ConfigurationError
from .monitor import Monitor
from .protocol import Mode
from .simnet import Scenario, Simulation, TraceWriter, load_scenario

log = logging.getLogger("sspaxos")

OUT_ENV = "SSPAXOS_OUT"
DEFAULT_OUT = "sspaxos-out"


def parse_seeds(text: str) -> list[int]:
    """``"7"`` gives one seed, ``"1..100"`` an inclusive range."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            return list(range(lo_i, hi_i + 1))
        return [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r}, expected A..B") from None


def apply_overrides(sc: Scenario, args: argparse.Namespace) -> Scenario:
    changes: dict = {}
    if args.mode is not None:
        changes["mode"] = Mode(args.mode)
    if args.init is not None:
        changes["init"] = args.init
    if args.theta is not None:
        changes["theta"] = args.theta
    if args.max_events is not None:
        changes["max_events"] = args.max_events
    if args.overflow is not None:
        changes["overflow"] = args.overflow
    return replace(sc, **changes) if changes else sc


def run_one(sc: Scenario, out_dir: str, monitor: bool = True) -> dict:
    """Run one seed and write its artifacts; return the run summary."""
    os.makedirs(out_dir, exist_ok=True)
    mon = Monitor() if monitor else None
    with open(os.path.join(out_dir, "trace.jsonl"), "w", encoding="utf-8") as trace:
        observers: list = [TraceWriter(trace)]
        if mon is not None:
            observers.append(mon)
        result = Simulation(sc, observers).run()
    per_step = Counter(d.s for _, d in result.decisions)
    summary = {
        "seed": sc.seed,
        "scenario": {"n": sc.n, "f": sc.f, "C": sc.C, "b": sc.b, "mode": sc.mode.value, "init": sc.init,
                     "schedule": sc.schedule, "theta": sc.theta, "overflow": sc.overflow,
                     "capacity": sc.capacity_mode, "max_events": sc.max_events},
        "events": result.events,
        "stop": result.stop,
        "decisions_per_step": {str(s): per_step[s] for s in sorted(per_step)},
    }
    if sc.capacity_mode == "direction":
        summary["note"] = "per-direction channel capacity; the census bound K assumes per-pair capacity"
    if mon is not None:
        report = mon.report()
        summary["monitor"] = report
        summary["verdict"] = report["verdict"]
        with open(os.path.join(out_dir, "annotations.jsonl"), "w", encoding="utf-8") as fh:
            for ann in mon.annotations:
                fh.write(json.dumps(ann, sort_keys=True, default=str) + "\n")
    else:
        summary["verdict"] = "unmonitored"
    summary["exit_status"] = 1 if summary["verdict"] == "violation" else 0
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return summary


def _run_job(job: tuple) -> dict:
    sc, out_dir, monitor = job
    return run_one(sc, out_dir, monitor)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sspaxos", description="Simulate and audit self-stabilizing Paxos.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", help="scenario file (TOML)")
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, help="single seed (default: the file's init.seed)")
    seeds.add_argument("--seeds", type=parse_seeds, help="inclusive seed range A..B (batch mode)")
    run.add_argument("--mode", choices=[m.value for m in Mode])
    run.add_argument("--init", choices=["clean", "adversarial"])
    run.add_argument("--theta", choices=["static", "detector"])
    run.add_argument("--max-events", type=int)
    run.add_argument("--overflow", choices=["drop-oldest", "drop-newest"])
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    run.add_argument("--no-monitor", action="store_true", help="skip the monitor; write the trace only")
    run.add_argument("--jobs", type=int, default=1, help="parallel processes for batch runs")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    base = apply_overrides(load_scenario(args.scenario), args)
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    seeds: Optional[list] = args.seeds
    if seeds is None:
        if args.seed is not None:
            base = base.with_seed(args.seed)
        summary = run_one(base, out, not args.no_monitor)
        print(f"seed {base.seed}: {summary['events']} events, verdict {summary['verdict']}")
        return summary["exit_status"]
    jobs = [(base.with_seed(s), os.path.join(out, f"seed-{s}"), not args.no_monitor) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    failed = [r["seed"] for r in results if r["exit_status"]]
    for r in results:
        log.info("seed %d: %d events, verdict %s", r["seed"], r["events"], r["verdict"])
    batch = {
        "seeds": seeds,
        "verdicts": {str(r["seed"]): r["verdict"] for r in results},
        "failed": failed,
        "exit_status": 1 if failed else 0,
    }
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "batch.json"), "w", encoding="utf-8") as fh:
        json.dump(batch, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(results)} runs, {len(failed)} with violations")
    return batch["exit_status"]


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.max_events is not None and args.max_events < 0:
            raise ConfigurationError("--max-events must be non-negative")
        return cmd_run(args)
    except ConfigurationError as exc:
        parser.exit(2, f"sspaxos: configuration error: {exc}\n")
    except OSError as exc:
        parser.exit(2, f"sspaxos: {exc}\n")
    return 2
