"""Command-line front end.

``parlam run program.lp`` evaluates a program and prints its final value
to stdout; with ``--trace`` the merged reduction trace goes to stderr, one
event per line (``<iterPath>\\t<rule>\\t<depth>\\t<detail>``).
``parlam check program.lp`` parses and desugars only.

Exit codes: 0 success, 1 runtime error, 2 parse/desugar error, 3 usage
error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .errors import EvalError, ParseError
from .parser import desugar, parse
from .runtime import ExecMode, RunConfig, run_program
from .syntax import print_value


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return value


def _default_workers() -> int:
    return os.cpu_count() or 1


def build_arg_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="parlam", description="Run programs with parallel effect handlers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "evaluate a program and print its value"), ("check", "parse and desugar only")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("file", help="program file (.lp)")
        cmd.add_argument("--trace", action="store_true", help="print the reduction trace to stderr")
        cmd.add_argument(
            "--workers",
            type=_positive_int,
            default=None,
            help="worker count for parallel loops (default: host parallelism)",
        )
        cmd.add_argument(
            "--mode",
            choices=("parallel", "sequential"),
            default="parallel",
            help="loop execution strategy (results are identical)",
        )
        cmd.add_argument("--no-prelude", action="store_true", help="do not prepend the standard handlers")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    arg_parser = build_arg_parser()
    try:
        args = arg_parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    try:
        with open(args.file, "r", encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        print(f"usage error: cannot read {args.file}: {exc.strerror}", file=sys.stderr)
        return 3
    try:
        program = parse(source)
        expr = desugar(program, include_prelude=not args.no_prelude)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    if args.command == "check":
        return 0
    config = RunConfig(
        workers=args.workers if args.workers is not None else _default_workers(),
        trace_enabled=args.trace,
        mode=ExecMode.SEQUENTIAL if args.mode == "sequential" else ExecMode.PARALLEL,
    )
    try:
        value, events = run_program(expr, config)
    except EvalError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except RecursionError:
        print("runtime error: evaluation too deep", file=sys.stderr)
        return 1
    for event in events:
        print(event.format(), file=sys.stderr)
    print(print_value(value))
    return 0


def script_main() -> None:
    sys.exit(main())
