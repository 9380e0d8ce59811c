"""parlam: an interpreter for a small functional language where for-loops
are an effect, handlers carry state and a traverse clause, and loops that
escape every handler run their iterations in parallel."""

from . import stdlib as _stdlib  # registers builtins with the machine
from .errors import EvalError, LangError, ParseError
from .parser import compile_source, desugar, parse, print_program, print_surface
from .runtime import ExecMode, RunConfig, merge_traces, run_program
from .syntax import print_value, value_eq
from .trace import TraceEvent

__all__ = [
    "EvalError",
    "ExecMode",
    "LangError",
    "ParseError",
    "RunConfig",
    "TraceEvent",
    "compile_source",
    "desugar",
    "merge_traces",
    "parse",
    "print_program",
    "print_surface",
    "print_value",
    "run_program",
    "value_eq",
]

__version__ = "0.1.0"
