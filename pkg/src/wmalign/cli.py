"""Command-line entry points: ``run``, ``analyze``, ``compare`` and ``report``."""

from __future__ import annotations

import argparse
import glob
import sys
from typing import Sequence

from .evaluation import EvalSpecError
from .policies import UnknownPolicy
from .report import BundleError, analyze, audit, compare, format_table, load_bundle, render
from .runner import ConditionError, load_condition, run_condition
from .scene import SceneError
from .trace import TraceFormatError, read_trace


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def cmd_run(args: argparse.Namespace) -> int:
    try:
        condition = load_condition(args.condition)
        result = run_condition(condition, args.out, workers=args.workers, seed=args.seed)
    except FileNotFoundError as exc:
        return _err(f"{args.condition}: file not found: {exc.filename}")
    except UnknownPolicy as exc:
        return _err(f"{args.condition}: {exc.args[0]}")
    except (ConditionError, SceneError, EvalSpecError, ValueError) as exc:
        return _err(f"{args.condition}: {exc}")
    for tr, path in zip(result.traces, result.paths):
        print(f"{tr.episode_id}\t{tr.status.value if tr.status else 'incomplete'}\t{path}")
    return 0 if result.all_terminal else 1


def cmd_analyze(args: argparse.Namespace) -> int:
    paths = sorted(glob.glob(args.traces))
    traces = []
    for p in paths:
        try:
            traces.append(read_trace(p))
        except TraceFormatError as exc:
            return _err(f"{p}: {exc}")
    try:
        bundle = analyze(traces, args.specs, grounded=args.grounded)
    except (EvalSpecError, SceneError, BundleError, ValueError) as exc:
        return _err(str(exc))
    bundle.write(args.out)
    print(f"{len(traces)} traces, {len(bundle.conditions)} conditions -> {args.out}")
    if args.audit:
        problems = audit(bundle, traces)
        for p in problems:
            print(f"audit: {p}", file=sys.stderr)
        if problems:
            return 1
        print("audit: ok")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        row = compare(load_bundle(args.a), load_bundle(args.b))
    except (BundleError, OSError) as exc:
        return _err(str(exc))
    print(format_table([row]), end="")
    if row["n"] == 0:
        print("error: no episode terminated under both conditions; deltas undefined", file=sys.stderr)
        return 1
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    try:
        bundle = load_bundle(args.bundle)
    except (BundleError, OSError) as exc:
        return _err(str(exc))
    sys.stdout.write(render(bundle, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmalign", description="Two-agent coordination simulator and trace metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate every episode of a condition file")
    p.add_argument("--condition", required=True, help="condition JSON file")
    p.add_argument("--out", required=True, help="directory for trace files")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override the condition's seed_base")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="build a report bundle from trace files")
    p.add_argument("--traces", required=True, help="glob of trace files")
    p.add_argument("--specs", default=None, help="directory of <episode_id>.json evaluation specs")
    p.add_argument("--out", required=True, help="bundle file to write")
    p.add_argument("--grounded", action="store_true", help="add grounded alignment-gap columns")
    p.add_argument("--audit", action="store_true", help="recompute aggregates and check belief sets")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="paired deltas between two single-condition bundles")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="print a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--format", choices=("table", "rows"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        return _err("--workers must be at least 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
