"""Command line: ``fgsim run | replay | validate | presets``."""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from .errors import SimError, ValidationError
from .monitor import build_report, dumps_report
from .scenario import PRESETS, load_scenario, preset_text
from .trace import read_trace

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_INPUT = 2


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _fail(exc: SimError) -> int:
    errors = exc.errors if isinstance(exc, ValidationError) else [str(exc)]
    for line in errors:
        print(f"{exc.code}: {line}", file=sys.stderr)
    return EXIT_INPUT


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except SimError as exc:
        return _fail(exc)
    mitigation = None if args.mitigation is None else args.mitigation == "on"
    sim = scenario.build(seed=args.seed, mitigation=mitigation)
    result = sim.run(scenario.horizon_ms)
    if args.trace:
        result.trace.write(args.trace)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_report(result.report))
    _print({"scenario": scenario.name, "seed": sim.seed, "horizon_ms": scenario.horizon_ms,
            "mitigation": sim.mitigation, **result.summary()})
    if result.violations:
        for v in result.violations:
            print(f"invariant violation: {v}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        header, records, warnings = read_trace(args.trace)
    except SimError as exc:
        return _fail(exc)
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = dumps_report(build_report(header, records, warnings))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except SimError as exc:
        return _fail(exc)
    print(f"ok: {scenario.name} ({scenario.version.name}, {len(scenario.apps)} apps, "
          f"{len(scenario.strategies)} strategies, horizon {scenario.horizon_ms} ms)")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in PRESETS:
            desc = yaml.safe_load(preset_text(name)).get("description", "")
            print(f"{name:14} {desc}")
        return EXIT_OK
    if not args.name:
        print("presets show needs a preset name", file=sys.stderr)
        return EXIT_INPUT
    try:
        sys.stdout.write(preset_text(args.name))
    except SimError as exc:
        return _fail(exc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write trace/report")
    run.add_argument("--scenario", required=True, help="scenario file or preset name")
    run.add_argument("--trace", help="write the line-delimited trace here")
    run.add_argument("--report", help="write the monitor report here")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--mitigation", choices=("on", "off"), help="override monitor mitigation")
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="recompute the monitor report from a trace")
    replay.add_argument("--trace", required=True)
    replay.add_argument("--report", help="write the report here instead of stdout")
    replay.set_defaults(func=cmd_replay)

    validate = sub.add_parser("validate", help="check a scenario file")
    validate.add_argument("--scenario", required=True)
    validate.set_defaults(func=cmd_validate)

    presets = sub.add_parser("presets", help="list or print bundled scenarios")
    presets.add_argument("action", choices=("list", "show"))
    presets.add_argument("name", nargs="?")
    presets.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
