"""Command-line interface: ``riskshare {run,oracle,report,list-scenarios}``.

Exit codes: 0 success, 1 usage or scenario parse error, 2 solver failure,
3 oracle failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from riskshare import __version__
from riskshare.experiment import SolverFailure, run_scenario, summary_lines
from riskshare.oracles import SUITES, run_suite
from riskshare.report import load_records, write_report
from riskshare.scenario import GAME_KINDS, ScenarioError, bundled, bundled_names, parse_freeze_tbr, resolve

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskshare", description="Risk sharing between firms and mean-variance agents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve a scenario and write its record")
    run.add_argument("scenario", help="bundled scenario name or path to a TOML file")
    run.add_argument("--freeze-tbr", choices=("0", "1", "none"), default=None,
                     help="hold the tie-breaking rule at 0 or 1, or leave it free")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--max-iter", type=int, default=None)
    run.add_argument("--out-dir", default="results")
    run.add_argument("--game", choices=GAME_KINDS, default=None, help="require this game kind")

    oracle = sub.add_parser("oracle", help="run an independent cross-check")
    oracle.add_argument("suite", choices=sorted(SUITES) + ["all"])

    report = sub.add_parser("report", help="compare experiment records")
    report.add_argument("records", nargs="+", help="record JSON files")
    report.add_argument("--out-dir", default="report")

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.add_argument("--game", choices=GAME_KINDS, default=None)
    return parser


def _cmd_run(args) -> int:
    scenario = resolve(args.scenario)
    if args.game is not None and scenario.kind != args.game:
        raise UsageError(f"scenario {scenario.name!r} is a {scenario.kind} game, not {args.game}")
    changes = {}
    if args.freeze_tbr is not None:
        if scenario.kind != "risk":
            raise UsageError("--freeze-tbr applies to risk scenarios only")
        changes["freeze_tbr"] = parse_freeze_tbr(args.freeze_tbr)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_iter is not None:
        if args.max_iter < 1:
            raise UsageError("--max-iter must be positive")
        changes["max_iter"] = args.max_iter
    if changes:
        scenario = scenario.with_solver(**changes)
    record = run_scenario(scenario)
    path = record.write(args.out_dir)
    print("\n".join(summary_lines(record)))
    print(f"record written to {path} ({record.wall_time:.1f}s)")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    reports = run_suite(args.suite)
    for r in reports:
        print("\n".join(r.lines()))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ORACLE


def _cmd_report(args) -> int:
    try:
        records = load_records(args.records)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read records: {exc}") from None
    path, text, warnings = write_report(records, args.out_dir)
    for w in warnings:
        print(w, file=sys.stderr)
    print(text, end="")
    print(f"report written to {path}")
    return EXIT_OK


def _cmd_list(args) -> int:
    for name in bundled_names():
        s = bundled(name)
        if args.game is None or s.kind == args.game:
            print(f"{name:16s} {s.kind:7s} {s.description}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "oracle": _cmd_oracle, "report": _cmd_report, "list-scenarios": _cmd_list}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (UsageError, ScenarioError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
