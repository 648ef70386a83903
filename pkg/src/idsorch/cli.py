"""``idsctl``: command-line front end for running and comparing orchestration scenarios."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import report
from .simnet import (
    LIBRARY,
    Scenario,
    ScenarioError,
    load_scenario,
    run_scenario,
    scenario_problems,
)

OUT_ENV = "IDSCTL_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _err(msg: str) -> None:
    print(f"idsctl: {msg}", file=sys.stderr)


def resolve(name_or_file: str) -> Scenario:
    if name_or_file in LIBRARY:
        return LIBRARY[name_or_file]()
    return load_scenario(name_or_file)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = resolve(args.scenario)
        if args.monitor_interval is not None:
            scenario = replace(scenario, monitor_interval=args.monitor_interval)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
        problems = scenario_problems(scenario)
        if problems:
            raise ScenarioError(problems)
    except ScenarioError as exc:
        for p in exc.problems:
            _err(p)
        return EXIT_CONFIG

    out = args.output or os.environ.get(OUT_ENV) or "out"
    try:
        result = run_scenario(scenario)
        summary = report.write_run(result, out, figures=args.figures)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        _err(f"run failed: {exc}")
        return EXIT_RUNTIME
    sys.stdout.write(report.format_summary(summary))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        problems = scenario_problems(resolve(args.file))
    except ScenarioError as exc:
        problems = exc.problems
    for p in problems:
        print(f"violation: {p}")
    if problems:
        return EXIT_CONFIG
    print(f"{args.file}: ok")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        a = report.load_summary(args.dir_a)
        b = report.load_summary(args.dir_b)
    except report.ReportError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    cmp = report.compare(a, b)
    if not cmp["same_scenario"]:
        _err(f"warning: comparing different scenarios ({cmp['a']} vs {cmp['b']})")
    sys.stdout.write(report.format_comparison(cmp))
    Path(args.output).write_text(json.dumps(cmp, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_show(args: argparse.Namespace) -> int:
    if args.name not in LIBRARY:
        _err(f"unknown library scenario {args.name!r}; choose from {', '.join(LIBRARY)}")
        return EXIT_CONFIG
    sys.stdout.write(LIBRARY[args.name]().to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idsctl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a library scenario or a scenario file")
    r.add_argument("scenario", help=f"one of {', '.join(LIBRARY)} or a JSON file")
    r.add_argument("-o", "--output", help=f"output directory (default: ${OUT_ENV} or ./out)")
    r.add_argument("--monitor-interval", type=float, metavar="S")
    r.add_argument("--seed", type=int, metavar="N")
    r.add_argument("--figures", action="store_true", help="also render rates.png and timeline.png")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compare", help="response-time deltas between two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("-o", "--output", default="comparison.json", help="delta file (default: %(default)s)")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("show", help="print a library scenario as JSON")
    s.add_argument("name")
    s.set_defaults(func=cmd_show)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
