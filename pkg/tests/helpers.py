"""Shared helpers for the test suite."""

from __future__ import annotations

from pathlib import Path

from parlam import ExecMode, RunConfig, compile_source, print_value, run_program

PROGRAMS_DIR = Path(__file__).resolve().parent.parent / "programs"


def run_source(
    source: str,
    workers: int = 2,
    trace: bool = False,
    mode: ExecMode = ExecMode.PARALLEL,
    prelude: bool = True,
):
    expr = compile_source(source, include_prelude=prelude)
    config = RunConfig(workers=workers, trace_enabled=trace, mode=mode)
    return run_program(expr, config)


def run_printed(source: str, **kwargs) -> str:
    value, _ = run_source(source, **kwargs)
    return print_value(value)


def program_path(name: str) -> str:
    return str(PROGRAMS_DIR / name)
