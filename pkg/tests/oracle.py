"""Independent reference evaluator used by the differential tests.

Evaluates closed core expressions by small-step rewriting: it decomposes
the term to find the next redex, substitutes values directly into
expressions (capture-free because only closed values are substituted),
builds resumptions syntactically as lambdas that embed the captured
context, and runs the iterations of fully-escaped loops sequentially in
index order. It shares the core AST and value types with the interpreter
under test, but nothing of its evaluation machinery: no environments, no
resume chains, no concurrency, and its own builtin reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

from parlam.machine import BUILTIN_ARITY
from parlam.syntax import (
    App,
    BoolV,
    Builtin,
    CaseEither,
    Expr,
    FloatV,
    For,
    Handle,
    HandlerExpr,
    If,
    IntV,
    Lam,
    Lit,
    Perform,
    StrV,
    TableLit,
    TableV,
    TupleLit,
    TupleV,
    LeftV,
    RightV,
    Value,
    Var,
)


class OracleError(Exception):
    pass


class OracleUnsupported(OracleError):
    pass


_FRESH = 0


def _fresh(hint: str) -> str:
    global _FRESH
    _FRESH += 1
    return f"%{hint}{_FRESH}"


# --------------------------------------------------------------------------
# Values as expressions


def _builtin_spine(e: Expr) -> Optional[tuple[str, list[Expr]]]:
    args: list[Expr] = []
    while isinstance(e, App):
        args.append(e.arg)
        e = e.fn
    if isinstance(e, Builtin):
        args.reverse()
        return e.name, args
    return None


def is_value(e: Expr) -> bool:
    match e:
        case Lit() | Lam() | Builtin():
            return True
        case TableLit(elems) | TupleLit(elems):
            return all(is_value(x) for x in elems)
        case App():
            spine = _builtin_spine(e)
            if spine is None:
                return False
            name, args = spine
            if not all(is_value(a) for a in args):
                return False
            if name in ("Left", "Right"):
                return len(args) == 1
            return len(args) < BUILTIN_ARITY.get(name, 0)
    return False


def to_value(e: Expr) -> Value:
    """Convert a first-order value expression to a runtime value."""
    match e:
        case Lit(v):
            return v
        case TableLit(elems):
            return TableV(tuple(to_value(x) for x in elems))
        case TupleLit(elems):
            return TupleV(tuple(to_value(x) for x in elems))
        case App(Builtin("Left"), payload):
            return LeftV(to_value(payload))
        case App(Builtin("Right"), payload):
            return RightV(to_value(payload))
    raise OracleError(f"not a first-order value: {e!r}")


def from_value(v: Value) -> Expr:
    match v:
        case TableV(elems):
            return TableLit(tuple(from_value(x) for x in elems))
        case TupleV(elems):
            return TupleLit(tuple(from_value(x) for x in elems))
        case LeftV(payload):
            return App(Builtin("Left"), from_value(payload))
        case RightV(payload):
            return App(Builtin("Right"), from_value(payload))
    return Lit(v)


# --------------------------------------------------------------------------
# Substitution (values substituted are always closed, so no renaming)


def subst(e: Expr, name: str, v: Expr) -> Expr:
    match e:
        case Lit() | Builtin():
            return e
        case Var(x):
            return v if x == name else e
        case Lam(param, body):
            return e if param == name else Lam(param, subst(body, name, v))
        case App(fn, arg):
            return App(subst(fn, name, v), subst(arg, name, v))
        case Perform(op, arg):
            return Perform(op, subst(arg, name, v))
        case For(var, size, body):
            new_body = body if var == name else subst(body, name, v)
            return For(var, subst(size, name, v), new_body)
        case Handle(h, s, b):
            new_h = HandlerExpr(
                h.op_name,
                subst(h.return_clause, name, v),
                subst(h.op_clause, name, v),
                subst(h.traverse_clause, name, v),
            )
            return Handle(new_h, subst(s, name, v), subst(b, name, v))
        case TableLit(elems):
            return TableLit(tuple(subst(x, name, v) for x in elems))
        case TupleLit(elems):
            return TupleLit(tuple(subst(x, name, v) for x in elems))
        case If(c, t, o):
            return If(subst(c, name, v), subst(t, name, v), subst(o, name, v))
        case CaseEither(sc, lv, lb, rv, rb):
            return CaseEither(
                subst(sc, name, v),
                lv,
                lb if lv == name else subst(lb, name, v),
                rv,
                rb if rv == name else subst(rb, name, v),
            )
    raise OracleError(f"cannot substitute into {type(e).__name__}")


# --------------------------------------------------------------------------
# Builtin delta-reductions (independent implementations)


def _num(e: Expr):
    if isinstance(e, Lit) and isinstance(e.value, (IntV, FloatV)):
        return e.value
    return None


def _expr_eq(a: Expr, b: Expr) -> bool:
    if isinstance(a, (Lam, Builtin)) or isinstance(b, (Lam, Builtin)):
        raise OracleError("cannot compare functions")
    match a, b:
        case (Lit(x), Lit(y)):
            return type(x) is type(y) and x == y
        case (TableLit(xs), TableLit(ys)) | (TupleLit(xs), TupleLit(ys)):
            return len(xs) == len(ys) and all(_expr_eq(x, y) for x, y in zip(xs, ys))
        case (App(Builtin(n1), p1), App(Builtin(n2), p2)):
            return n1 == n2 and _expr_eq(p1, p2)
    return False


def _delta(name: str, args: list[Expr]) -> Expr:
    if name in ("+", "-", "*"):
        a, b = _num(args[0]), _num(args[1])
        if a is None or b is None or type(a) is not type(b):
            raise OracleError(f"bad operands for {name}")
        ops = {"+": lambda x, y: x + y, "-": lambda x, y: x - y, "*": lambda x, y: x * y}
        result = ops[name](a.value, b.value)
        return Lit(IntV(result) if isinstance(a, IntV) else FloatV(result))
    if name in ("<", "<="):
        a, b = _num(args[0]), _num(args[1])
        if a is None or b is None or type(a) is not type(b):
            raise OracleError(f"bad operands for {name}")
        return Lit(BoolV(a.value < b.value if name == "<" else a.value <= b.value))
    if name == "==":
        return Lit(BoolV(_expr_eq(args[0], args[1])))
    if name == "++":
        a, b = args
        if isinstance(a, Lit) and isinstance(a.value, StrV) and isinstance(b, Lit) and isinstance(b.value, StrV):
            return Lit(StrV(a.value.value + b.value.value))
        raise OracleError("bad operands for ++")
    if name == "length":
        (t,) = args
        if isinstance(t, TableLit):
            return Lit(IntV(len(t.elems)))
        raise OracleError("length of non-table")
    if name in ("fst", "snd"):
        (t,) = args
        if isinstance(t, TupleLit):
            return t.elems[0] if name == "fst" else t.elems[1]
        raise OracleError(f"{name} of non-tuple")
    if name == "concat":
        (t,) = args
        if isinstance(t, TableLit) and all(isinstance(x, TableLit) for x in t.elems):
            flat: list[Expr] = []
            for inner in t.elems:
                flat.extend(inner.elems)  # type: ignore[attr-defined]
            return TableLit(tuple(flat))
        raise OracleError("concat of non-table-of-tables")
    if name == "toString":
        (v,) = args
        if isinstance(v, Lit) and isinstance(v.value, IntV):
            return Lit(StrV(str(v.value.value)))
        raise OracleError("toString of non-int")
    if name == "reduce":
        f, t = args
        if not isinstance(t, TableLit):
            raise OracleError("reduce of non-table")
        n = len(t.elems)
        if n == 0:
            raise OracleError("reduce of empty table")
        if n == 1:
            return t.elems[0]
        mid = (n + 1) // 2
        left = App(App(Builtin("reduce"), f), TableLit(t.elems[:mid]))
        right = App(App(Builtin("reduce"), f), TableLit(t.elems[mid:]))
        return App(App(f, left), right)
    if name == "firstFailure":
        (t,) = args
        if not isinstance(t, TableLit):
            raise OracleError("firstFailure of non-table")
        payloads: list[Expr] = []
        for x in t.elems:
            match x:
                case App(Builtin("Left"), _):
                    return x
                case App(Builtin("Right"), payload):
                    payloads.append(payload)
                case _:
                    raise OracleError("firstFailure: not an Either")
        return App(Builtin("Right"), TableLit(tuple(payloads)))
    if name == "cartesianProd":
        (t,) = args
        if not isinstance(t, TableLit) or not all(isinstance(x, TableLit) for x in t.elems):
            raise OracleError("cartesianProd of non-table-of-tables")
        rows: list[tuple[Expr, ...]] = [()]
        for inner in t.elems:
            rows = [row + (choice,) for row in rows for choice in inner.elems]  # type: ignore[attr-defined]
        return TableLit(tuple(TableLit(row) for row in rows))
    raise OracleUnsupported(f"oracle does not implement builtin '{name}'")


# --------------------------------------------------------------------------
# Decomposition

Plug = Callable[[Expr], Expr]


@dataclass(frozen=True)
class IsValue:
    pass


@dataclass(frozen=True)
class Stepped:
    expr: Expr


@dataclass(frozen=True)
class OpFound:
    op_name: str
    arg: Expr
    plug: Plug


@dataclass(frozen=True)
class LoopFound:
    size: int
    var: str
    body: Expr
    plug: Plug


Outcome = Union[IsValue, Stepped, OpFound, LoopFound]

_ID: Plug = lambda hole: hole


def _wrap(outcome: Outcome, ctx: Plug) -> Outcome:
    match outcome:
        case Stepped(e):
            return Stepped(ctx(e))
        case OpFound(op, arg, plug):
            return OpFound(op, arg, lambda hole, p=plug: ctx(p(hole)))
        case LoopFound(n, var, body, plug):
            return LoopFound(n, var, body, lambda hole, p=plug: ctx(p(hole)))
    return outcome


def _find_in_elems(elems: tuple[Expr, ...], rebuild: Callable[[tuple[Expr, ...]], Expr]) -> Optional[Outcome]:
    for i, x in enumerate(elems):
        if not is_value(x):
            ctx: Plug = lambda hole, i=i: rebuild(elems[:i] + (hole,) + elems[i + 1 :])
            return _wrap(find(x), ctx)
    return None


def find(e: Expr) -> Outcome:
    if is_value(e):
        return IsValue()
    match e:
        case App(fn, arg):
            if not is_value(fn):
                return _wrap(find(fn), lambda hole: App(hole, arg))
            if not is_value(arg):
                return _wrap(find(arg), lambda hole: App(fn, hole))
            if isinstance(fn, Lam):
                return Stepped(subst(fn.body, fn.param, arg))
            if isinstance(fn, TableLit):
                if isinstance(arg, Lit) and isinstance(arg.value, IntV):
                    i = arg.value.value
                    if 0 <= i < len(fn.elems):
                        return Stepped(fn.elems[i])
                    raise OracleError("index out of bounds")
                raise OracleError("table index must be an integer")
            spine = _builtin_spine(e)
            if spine is not None:
                name, args = spine
                if name in BUILTIN_ARITY and len(args) == BUILTIN_ARITY[name]:
                    return Stepped(_delta(name, args))
            raise OracleError("applied non-function")
        case TableLit(elems):
            found = _find_in_elems(elems, TableLit)
            if found is not None:
                return found
        case TupleLit(elems):
            found = _find_in_elems(elems, TupleLit)
            if found is not None:
                return found
        case Perform(op, arg):
            if not is_value(arg):
                return _wrap(find(arg), lambda hole: Perform(op, hole))
            return OpFound(op, arg, _ID)
        case For(var, size, body):
            if not is_value(size):
                return _wrap(find(size), lambda hole: For(var, hole, body))
            if isinstance(size, Lit) and isinstance(size.value, IntV) and size.value.value >= 0:
                return LoopFound(size.value.value, var, body, _ID)
            raise OracleError("for size not a non-negative integer")
        case If(cond, then, orelse):
            if not is_value(cond):
                return _wrap(find(cond), lambda hole: If(hole, then, orelse))
            if isinstance(cond, Lit) and isinstance(cond.value, BoolV):
                return Stepped(then if cond.value.value else orelse)
            raise OracleError("if condition must be a boolean")
        case CaseEither(scrut, lv, lb, rv, rb):
            if not is_value(scrut):
                return _wrap(find(scrut), lambda hole: CaseEither(hole, lv, lb, rv, rb))
            match scrut:
                case App(Builtin("Left"), payload):
                    return Stepped(subst(lb, lv, payload))
                case App(Builtin("Right"), payload):
                    return Stepped(subst(rb, rv, payload))
            raise OracleError("case scrutinee must be Left or Right")
        case Handle(h, s, b):
            clause_slots = (
                (h.return_clause, lambda c: HandlerExpr(h.op_name, c, h.op_clause, h.traverse_clause)),
                (h.op_clause, lambda c: HandlerExpr(h.op_name, h.return_clause, c, h.traverse_clause)),
                (h.traverse_clause, lambda c: HandlerExpr(h.op_name, h.return_clause, h.op_clause, c)),
            )
            for clause, rebuild in clause_slots:
                if not is_value(clause):
                    ctx: Plug = lambda hole, rb_=rebuild: Handle(rb_(hole), s, b)
                    return _wrap(find(clause), ctx)
            if not is_value(s):
                return _wrap(find(s), lambda hole: Handle(h, hole, b))
            inner = find(b)
            match inner:
                case IsValue():
                    return Stepped(App(App(h.return_clause, s), b))
                case Stepped(b2):
                    return Stepped(Handle(h, s, b2))
                case OpFound(op, arg, plug):
                    if op == h.op_name:
                        ks, kx = _fresh("s"), _fresh("x")
                        resume = Lam(ks, Lam(kx, Handle(h, Var(ks), plug(Var(kx)))))
                        return Stepped(App(App(App(h.op_clause, s), arg), resume))
                    return _wrap(inner, lambda hole: Handle(h, s, hole))
                case LoopFound(n, var, body, plug):
                    ss = _fresh("ss")
                    loop_fn = Lam(ss, For(var, Lit(IntV(n)), Handle(h, App(Var(ss), Var(var)), body)))
                    ks, kxs = _fresh("s"), _fresh("xs")
                    resume = Lam(ks, Lam(kxs, Handle(h, Var(ks), plug(Var(kxs)))))
                    return Stepped(
                        App(App(App(App(h.traverse_clause, Lit(IntV(n))), s), loop_fn), resume)
                    )
    raise OracleError(f"stuck term: {type(e).__name__}")


# --------------------------------------------------------------------------
# Driver


def evaluate(e: Expr, fuel: int = 500_000) -> Expr:
    """Rewrite a closed core expression to a value expression."""
    while True:
        outcome = find(e)
        match outcome:
            case IsValue():
                return e
            case Stepped(e2):
                e = e2
            case OpFound(op, _, _):
                raise OracleError(f"unhandled operation {op}")
            case LoopFound(n, var, body, plug):
                iterations = []
                for i in range(n):
                    iterations.append(evaluate(subst(body, var, Lit(IntV(i))), fuel))
                e = plug(TableLit(tuple(iterations)))
        fuel -= 1
        if fuel <= 0:
            raise OracleError("oracle fuel exhausted")


def evaluate_to_value(e: Expr, fuel: int = 500_000) -> Value:
    return to_value(evaluate(e, fuel))
