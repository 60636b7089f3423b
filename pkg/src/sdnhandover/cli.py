"""Command line: ``simulate``, ``reproduce`` and ``validate``.

Exit codes: 0 ok, 1 an invariant monitor fired, 2 bad input.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .reproduce import reproduce
from .scenario import ScenarioError, parse_scenario
from .world import run_scenario

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


def _load(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return None
    try:
        return parse_scenario(text)
    except ScenarioError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return None


def _simulate(args) -> int:
    scenario = _load(args.scenario)
    if scenario is None:
        return EXIT_INPUT
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    report = run_scenario(scenario)
    if args.out:
        report.write(args.out)
    if args.trace:
        Path(args.trace).write_text(report.trace)
    sys.stdout.write(report.summary)
    return EXIT_VIOLATION if report.violations else EXIT_OK


def _reproduce(args) -> int:
    sys.stdout.write(reproduce(args.which, args.out))
    return EXIT_OK


def _validate(args) -> int:
    scenario = _load(args.scenario)
    if scenario is None:
        return EXIT_INPUT
    print(f"{args.scenario}: ok ({len(scenario.devices)} devices, {len(scenario.flows)} flows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdnhandover", description="SDN Bluetooth/Wi-Fi handover simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="run a scenario file")
    sim.add_argument("scenario")
    sim.add_argument("--seed", type=int, help="override the scenario seed")
    sim.add_argument("--trace", metavar="PATH", help="write the event trace here")
    sim.add_argument("--out", metavar="DIR", help="write CSV reports and dumps into DIR")
    sim.set_defaults(func=_simulate)
    rep = sub.add_parser("reproduce", help="regenerate a built-in result")
    rep.add_argument("which", choices=("energy", "handover", "relay-qos"))
    rep.add_argument("--out", metavar="DIR")
    rep.set_defaults(func=_reproduce)
    val = sub.add_parser("validate", help="parse and validate a scenario file")
    val.add_argument("scenario")
    val.set_defaults(func=_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    return args.func(args)
