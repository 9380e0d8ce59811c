"""Core abstract syntax, runtime values, and canonical value printing.

The core AST is what the desugarer produces and the evaluator consumes.
Runtime values are immutable; environments are persistent, so captured
closures and resumptions can be re-entered any number of times without
observing later bindings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

from .errors import EvalError

# --------------------------------------------------------------------------
# Expressions


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Lit(Expr):
    """A literal; holds the runtime value directly."""

    value: "Value"


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Lam(Expr):
    param: str
    body: Expr


@dataclass(frozen=True)
class App(Expr):
    fn: Expr
    arg: Expr


@dataclass(frozen=True)
class For(Expr):
    """Index comprehension: evaluates `size`, then requests a loop of that
    many iterations of `body` with `index_var` bound to 0..size-1."""

    index_var: str
    size: Expr
    body: Expr


@dataclass(frozen=True)
class HandlerExpr:
    """The three clauses of a handler, plus the single operation it handles."""

    op_name: str
    return_clause: Expr
    op_clause: Expr
    traverse_clause: Expr


@dataclass(frozen=True)
class Handle(Expr):
    handler: HandlerExpr
    state: Expr
    body: Expr


@dataclass(frozen=True)
class Perform(Expr):
    op_name: str
    arg: Expr


@dataclass(frozen=True)
class TableLit(Expr):
    elems: tuple[Expr, ...]


@dataclass(frozen=True)
class TupleLit(Expr):
    elems: tuple[Expr, ...]  # arity >= 2


@dataclass(frozen=True)
class If(Expr):
    cond: Expr
    then: Expr
    orelse: Expr


@dataclass(frozen=True)
class CaseEither(Expr):
    scrutinee: Expr
    left_var: str
    left_body: Expr
    right_var: str
    right_body: Expr


@dataclass(frozen=True)
class Builtin(Expr):
    """Reference to a host primitive, resolved during desugaring."""

    name: str


# --------------------------------------------------------------------------
# Values


class Value:
    __slots__ = ()


@dataclass(frozen=True)
class IntV(Value):
    value: int


@dataclass(frozen=True)
class FloatV(Value):
    value: float


@dataclass(frozen=True)
class StrV(Value):
    value: str


@dataclass(frozen=True)
class BoolV(Value):
    value: bool


class UnitV(Value):
    __slots__ = ()

    def __repr__(self) -> str:
        return "UnitV()"


UNIT = UnitV()


@dataclass(frozen=True)
class TupleV(Value):
    elems: tuple[Value, ...]


@dataclass(frozen=True)
class TableV(Value):
    elems: tuple[Value, ...]


@dataclass(frozen=True)
class LeftV(Value):
    payload: Value


@dataclass(frozen=True)
class RightV(Value):
    payload: Value


@dataclass(frozen=True)
class KeyV(Value):
    """Opaque pseudo-random generator key (64-bit)."""

    bits: int


class FunctionV(Value):
    """Marker base for every applicable value (closures, builtins,
    resumptions). Function values print as ``<function>`` and cannot be
    compared for equality."""

    __slots__ = ()


@dataclass(frozen=True, eq=False)
class Closure(FunctionV):
    param: str
    body: Expr
    env: "Env"


@dataclass(frozen=True, eq=False)
class BuiltinV(FunctionV):
    """A host primitive, possibly partially applied."""

    name: str
    args: tuple[Value, ...] = ()


# --------------------------------------------------------------------------
# Environments


class Env:
    """Persistent environment: extension allocates a new frame and never
    mutates existing ones, so environments captured in closures or
    resumptions stay valid under multi-shot resumption."""

    __slots__ = ("_name", "_value", "_parent")

    def __init__(self, name: Optional[str], value: Optional[Value], parent: Optional["Env"]):
        self._name = name
        self._value = value
        self._parent = parent

    def extend(self, name: str, value: Value) -> "Env":
        return Env(name, value, self)

    def lookup(self, name: str) -> Value:
        env: Optional[Env] = self
        while env is not None:
            if env._name == name:
                return env._value  # type: ignore[return-value]
            env = env._parent
        raise EvalError(f"unbound variable '{name}'")


EMPTY_ENV = Env(None, None, None)


# --------------------------------------------------------------------------
# Printing and structural equality


def _print_float(f: float) -> str:
    text = repr(f)
    if "." not in text and "e" not in text and "inf" not in text and "nan" not in text:
        text += ".0"
    return text


def _print_either_payload(v: Value) -> str:
    # Payloads that would not re-parse as a single application argument get
    # wrapped in parentheses.
    text = print_value(v)
    needs_parens = isinstance(v, (LeftV, RightV)) or text.startswith("-")
    return f"({text})" if needs_parens else text


def print_value(v: Value) -> str:
    """Canonical rendering of a value.

    Injective on first-order values, and (keys aside) the output re-parses
    as source that evaluates back to an equal value.
    """
    match v:
        case IntV(value):
            return str(value)
        case FloatV(value):
            return _print_float(value)
        case StrV(value):
            return json.dumps(value, ensure_ascii=False)
        case BoolV(value):
            return "true" if value else "false"
        case UnitV():
            return "()"
        case TupleV(elems):
            return "(" + ", ".join(print_value(e) for e in elems) + ")"
        case TableV(elems):
            return "[" + ", ".join(print_value(e) for e in elems) + "]"
        case LeftV(payload):
            return f"Left {_print_either_payload(payload)}"
        case RightV(payload):
            return f"Right {_print_either_payload(payload)}"
        case KeyV(bits):
            return f"Key({bits:016x})"
        case FunctionV():
            return "<function>"
    raise EvalError(f"cannot print value of type {type(v).__name__}")


def value_eq(a: Value, b: Value) -> bool:
    """Structural equality on first-order values.

    Comparing function values (at any depth) is a runtime error.
    """
    if isinstance(a, FunctionV) or isinstance(b, FunctionV):
        raise EvalError("cannot compare functions")
    match a, b:
        case (UnitV(), UnitV()):
            return True
        case (IntV(x), IntV(y)):
            return x == y
        case (FloatV(x), FloatV(y)):
            return x == y
        case (StrV(x), StrV(y)):
            return x == y
        case (BoolV(x), BoolV(y)):
            return x == y
        case (KeyV(x), KeyV(y)):
            return x == y
        case (TupleV(xs), TupleV(ys)) | (TableV(xs), TableV(ys)):
            return len(xs) == len(ys) and all(value_eq(x, y) for x, y in zip(xs, ys))
        case (LeftV(x), LeftV(y)) | (RightV(x), RightV(y)):
            return value_eq(x, y)
    return False
