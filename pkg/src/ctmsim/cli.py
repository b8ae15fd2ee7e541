"""Command-line entry point: run scenarios, verify the proportionality
guarantee, summarize traces, and answer explanation queries.

Exit codes: 0 success, 1 verification failure, 2 config/usage error,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .core import ValidationError, is_power_of_two
from .runtime import (
    EngineAbort,
    TraceError,
    explain,
    load_trace,
    run_scenario,
    stats,
    verify_proportionality,
)
from .scenarios import ConfigError, load_scenario

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctmsim",
        description="Deterministic workspace-machine simulator and trace tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario and write its JSONL trace.")
    run.add_argument("--scenario", required=True, help="Scenario JSON file.")
    run.add_argument("--trace", required=True, help="Output trace file.")
    run.add_argument("--ticks", type=int, default=None, help="Tick budget override.")
    run.add_argument("--seed", type=int, default=None, help="Seed override.")
    run.add_argument("--parallel", type=int, default=1, help="Worker fan-out degree.")

    verify = sub.add_parser(
        "verify-proportionality",
        help="Check that win frequencies are proportional to the weights.",
    )
    verify.add_argument("--weights", required=True,
                        help="Comma-separated non-negative weights; count must be 2^k.")
    verify.add_argument("--trials", type=int, required=True)
    verify.add_argument("--seed", type=int, required=True)
    verify.add_argument("--tolerance", type=float, default=0.005)

    st = sub.add_parser("stats", help="Summarize a trace file.")
    st.add_argument("--trace", required=True)

    ex = sub.add_parser("explain", help="Print a broadcast's causal chain.")
    ex.add_argument("--trace", required=True)
    ex.add_argument("--broadcast", type=int, required=True)

    return parser


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.trace, "w", encoding="utf-8") as fh:
            summary = run_scenario(
                scenario, fh, seed=args.seed, ticks=args.ticks,
                parallelism=args.parallel,
            )
    except EngineAbort as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(
        f"ticks={summary.ticks_run} broadcasts={summary.broadcasts} "
        f"tasks_done={summary.tasks_done}"
    )
    return EXIT_OK


def cmd_verify_proportionality(args: argparse.Namespace) -> int:
    try:
        weights = [float(w) for w in args.weights.split(",")]
    except ValueError as exc:
        print(f"error: bad --weights: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not is_power_of_two(len(weights)) or len(weights) < 2:
        print("error: N must be 2^k", file=sys.stderr)
        return EXIT_CONFIG
    if any(w < 0 for w in weights):
        print("error: weights must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    result = verify_proportionality(weights, args.trials, args.seed, args.tolerance)
    print(result.to_text(), end="")
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        _, events = load_trace(args.trace)
    except (TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(stats(events).to_text(), end="")
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    try:
        _, events = load_trace(args.trace)
    except (TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        chain = explain(events, args.broadcast)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    for event in chain:
        print(json.dumps(event, separators=(",", ":")))
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "verify-proportionality": cmd_verify_proportionality,
    "stats": cmd_stats,
    "explain": cmd_explain,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
