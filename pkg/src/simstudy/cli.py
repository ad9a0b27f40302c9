"""``simstudy`` command: inspect archives, summarize, generate submit lines, emulate.

Exit codes: 0 success, 1 usage error, 2 data or protocol error.

Summary spec files hold one JSON object per line, e.g.::

    {"stat": "bias", "name": "bias_lambda", "estimate": "lambda_hat", "truth": 20}

Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from . import cluster
from .errors import ConfigError, SchemaError, SimError, SummaryError, UsageError
from .persistence import load
from .summary import SummarySpec

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UsageProblem(Exception):
    pass


def read_spec_file(path) -> list[SummarySpec]:
    specs = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise SummaryError(f"cannot read spec file: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            obj = json.loads(text)
            if not isinstance(obj, dict):
                raise SummaryError("expected a JSON object")
            specs.append(SummarySpec.from_dict(obj))
        except (json.JSONDecodeError, SummaryError, TypeError) as exc:
            msg = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            raise SummaryError(f"{path}: line {lineno}: {msg}") from None
    return specs


def _emit(frame: pd.DataFrame, as_csv: bool, out) -> None:
    if as_csv:
        frame.to_csv(out, index=False, lineterminator="\n")
    elif frame.empty:
        out.write("  ".join(map(str, frame.columns)) + "\n")
    else:
        out.write(frame.to_string(index=False) + "\n")


def cmd_inspect(args, out) -> int:
    sim = load(args.archive)
    frame = getattr(sim, args.table)
    if args.level_id is not None:
        if args.level_id not in {c.level_id for c in sim.combos}:
            raise SchemaError(f"unknown level id {args.level_id}")
        frame = frame[frame["level_id"] == args.level_id]
    _emit(frame, args.csv, out)
    return EXIT_OK


def cmd_summarize(args, out) -> int:
    specs = read_spec_file(args.spec)
    sim = load(args.archive)
    _emit(sim.summarize(*specs, mc_se=args.mc_se), args.csv, out)
    return EXIT_OK


def cmd_vars(args, out) -> int:
    sim = load(args.archive)
    try:
        value = sim.vars(args.name)
    except KeyError as exc:
        raise _UsageProblem(exc.args[0]) from None
    out.write(f"{value}\n")
    return EXIT_OK


def cmd_gen_submit(args, out) -> int:
    out.write(cluster.gen_submit(args.js, args.script, args.tasks) + "\n")
    return EXIT_OK


def cmd_emulate(args, out) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        raise _UsageProblem("emulate needs a program to run after '--'")
    archive = cluster.emulate_program(command, args.tasks, workdir=args.dir, tid_var=args.tid_var)
    out.write(f"archive: {archive}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simstudy", description="Inspect and drive simulation studies.")
    sub = p.add_subparsers(dest="command_name", required=True, parser_class=_Parser)

    s = sub.add_parser("inspect", help="print the results, errors, or warnings table")
    s.add_argument("table", choices=["results", "errors", "warnings"])
    s.add_argument("archive")
    s.add_argument("--level-id", type=int, default=None)
    s.add_argument("--csv", action="store_true", help="CSV instead of aligned text")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("summarize", help="summary statistics per level combo")
    s.add_argument("archive")
    s.add_argument("--spec", required=True, help="JSON-lines file of summary specs")
    s.add_argument("--mc-se", action="store_true", help="add Monte Carlo SE and CI columns")
    s.add_argument("--csv", action="store_true")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("vars", help="print a simulation variable")
    s.add_argument("archive")
    s.add_argument("name")
    s.set_defaults(func=cmd_vars)

    s = sub.add_parser("gen-submit", help="print job-array submission commands")
    s.add_argument("--js", required=True, help="scheduler code: " +
                   ", ".join(i.js_code for i in cluster.js_support()))
    s.add_argument("--script", default="run_sim.sh")
    s.add_argument("--tasks", type=int, required=True)
    s.set_defaults(func=cmd_gen_submit)

    s = sub.add_parser("emulate", help="run a simulation program through first/main/last")
    s.add_argument("--tasks", type=int, required=True)
    s.add_argument("--tid-var", default=None, help="extra task id variable to set")
    s.add_argument("--dir", default=None, help="working directory for the program (default: cwd)")
    s.add_argument("command", nargs=argparse.REMAINDER)
    s.set_defaults(func=cmd_emulate)
    return p


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (_UsageProblem, ConfigError, UsageError) as exc:
        print(f"simstudy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimError, OSError, ValueError) as exc:
        print(f"simstudy: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
