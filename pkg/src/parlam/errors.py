"""Error types shared across the interpreter."""

from __future__ import annotations


class LangError(Exception):
    """Base class for all user-visible interpreter errors."""


class ParseError(LangError):
    """Lexing, parsing, or desugaring failure, with source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class EvalError(LangError):
    """Runtime fault raised while evaluating a program.

    Faults are machine-level: there is no user-level catch other than
    writing an exception handler in the language itself.
    """
