"""The evaluator: big-step evaluation to a Step, and handler dispatch.

Evaluation never runs a loop or an operation directly. Instead it produces
either a final value (``Done``) or a suspension (``Suspended``) pairing a
request — an operation request or a loop request — with a resume chain that
continues the surrounding context. Handler dispatch inspects suspensions
escaping a handled body:

* a value runs the return clause,
* a matching operation request runs the operation clause with a two-argument
  resumption (new state, then result) that reinstalls the handler,
* a non-matching operation request is forwarded outward with this frame
  (and its current state) re-wrapped around the continuation,
* a loop request runs the traverse clause of *every* frame it crosses,
  handing it the loop size, the state, a loop value that re-wraps each
  iteration in this handler, and the post-loop resumption.

Resume chains are composed closures over immutable data, so a resumption
may be applied any number of times (multi-shot) from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

from . import trace
from .errors import EvalError
from .syntax import (
    App,
    Builtin,
    BuiltinV,
    CaseEither,
    Closure,
    Env,
    Expr,
    For,
    FunctionV,
    Handle,
    If,
    IntV,
    Lam,
    LeftV,
    Lit,
    Perform,
    RightV,
    BoolV,
    TableLit,
    TableV,
    TupleLit,
    TupleV,
    Value,
    Var,
    print_value,
)

# --------------------------------------------------------------------------
# Steps and requests


@dataclass(frozen=True, eq=False)
class OpReq:
    """The image of an operation call escaping its context."""

    op_name: str
    arg: Value


@dataclass(frozen=True, eq=False)
class LoopReq:
    """The image of a loop escaping its context. ``body_fn`` applied to an
    index in [0, size) yields the iteration's computation."""

    size: int
    body_fn: Value


Request = Union[OpReq, LoopReq]
ResumeChain = Callable[[Value], "Step"]


@dataclass(frozen=True, eq=False)
class Done:
    value: Value


@dataclass(frozen=True, eq=False)
class Suspended:
    request: Request
    resume: ResumeChain


Step = Union[Done, Suspended]


def _identity_chain(v: Value) -> Step:
    return Done(v)


@dataclass(frozen=True, eq=False)
class _Bind:
    resume: ResumeChain
    fn: Callable[[Value], Step]

    def __call__(self, v: Value) -> Step:
        return bind(self.resume(v), self.fn)


def bind(step: Step, fn: Callable[[Value], Step]) -> Step:
    """Continue a computation with ``fn`` once it produces a value;
    suspensions pass through with ``fn`` appended to the resume chain."""
    if isinstance(step, Done):
        return fn(step.value)
    return Suspended(step.request, _Bind(step.resume, fn))


# --------------------------------------------------------------------------
# Handler values and resumptions


@dataclass(frozen=True, eq=False)
class HandlerValue:
    """Evaluated handler clauses. ``depth`` records the handler-nesting
    depth at the install site, used only for trace events."""

    op_name: str
    return_fn: Value
    op_fn: Value
    traverse_fn: Value
    depth: int


def _resume_under(h: HandlerValue, state: Value, chain: ResumeChain, v: Value) -> Step:
    """Continue the captured context with ``v`` under handler ``h`` holding
    ``state`` — the machine image of re-wrapping the context in the frame."""
    with trace.at_depth(h.depth + 1):
        step = chain(v)
    return dispatch_handle(h, state, step)


@dataclass(frozen=True, eq=False)
class _ForwardChain:
    h: HandlerValue
    state: Value
    chain: ResumeChain

    def __call__(self, v: Value) -> Step:
        return _resume_under(self.h, self.state, self.chain, v)


@dataclass(frozen=True, eq=False)
class OpResume(FunctionV):
    """Operation resumption, awaiting the new handler state."""

    h: HandlerValue
    chain: ResumeChain


@dataclass(frozen=True, eq=False)
class OpResume1(FunctionV):
    """Operation resumption with its state applied, awaiting the result."""

    h: HandlerValue
    chain: ResumeChain
    state: Value


@dataclass(frozen=True, eq=False)
class LoopResume(FunctionV):
    """Post-loop resumption, awaiting the new handler state."""

    h: HandlerValue
    chain: ResumeChain


@dataclass(frozen=True, eq=False)
class LoopResume1(FunctionV):
    h: HandlerValue
    chain: ResumeChain
    state: Value


@dataclass(frozen=True, eq=False)
class LoopBody(FunctionV):
    """The loop value handed to a traverse clause: applied to a state table
    of matching length, it yields a fresh loop request whose iterations are
    wrapped in the handler with their respective states."""

    h: HandlerValue
    size: int
    body_fn: Value


@dataclass(frozen=True, eq=False)
class LoopIterFn(FunctionV):
    """One handler-wrapped iteration of a re-raised loop request."""

    h: HandlerValue
    states: TableV
    body_fn: Value


RESUMPTION_KINDS = {
    OpResume: "op-resumption",
    OpResume1: "op-resumption",
    LoopResume: "loop-resumption",
    LoopResume1: "loop-resumption",
    LoopBody: "loop-body",
    LoopIterFn: "loop-body",
}


# --------------------------------------------------------------------------
# Builtin registry (populated by the stdlib module at import time)

BUILTIN_ARITY: dict[str, int] = {}
_BUILTIN_IMPLS: dict[str, Callable[[tuple[Value, ...]], Step]] = {}


def register_builtin(name: str, arity: int, impl: Callable[[tuple[Value, ...]], Step]) -> None:
    BUILTIN_ARITY[name] = arity
    _BUILTIN_IMPLS[name] = impl


# --------------------------------------------------------------------------
# Evaluation
#
# Dispatch is by exact node type with fast paths for sub-steps that finish
# immediately, so pure code allocates no continuation closures. The generic
# bind-based paths only run when a subexpression actually suspends.

_LOCAL = trace._LOCAL


def eval_expr(env: Env, e: Expr) -> Step:
    t = type(e)
    if t is App:
        fstep = eval_expr(env, e.fn)
        if type(fstep) is Done:
            astep = eval_expr(env, e.arg)
            if type(astep) is Done:
                return apply_value(fstep.value, astep.value)
            fv = fstep.value
            return Suspended(astep.request, _Bind(astep.resume, lambda av: apply_value(fv, av)))
        arg = e.arg
        return Suspended(
            fstep.request,
            _Bind(fstep.resume, lambda fv: bind(eval_expr(env, arg), lambda av: apply_value(fv, av))),
        )
    if t is Var:
        return Done(env.lookup(e.name))
    if t is Lit:
        return Done(e.value)
    if t is Lam:
        return Done(Closure(e.param, e.body, env))
    if t is Builtin:
        return Done(BuiltinV(e.name))
    if t is Perform:
        astep = eval_expr(env, e.arg)
        op_name = e.op_name
        if type(astep) is Done:
            return Suspended(OpReq(op_name, astep.value), _identity_chain)
        return Suspended(
            astep.request,
            _Bind(astep.resume, lambda av: Suspended(OpReq(op_name, av), _identity_chain)),
        )
    if t is For:
        nstep = eval_expr(env, e.size)
        if type(nstep) is Done:
            return _raise_loop(env, e.index_var, nstep.value, e.body)
        index_var, body = e.index_var, e.body
        return Suspended(
            nstep.request, _Bind(nstep.resume, lambda nv: _raise_loop(env, index_var, nv, body))
        )
    if t is Handle:
        handler, state, body = e.handler, e.state, e.body
        depth = _LOCAL.depth
        return bind(
            eval_expr(env, handler.return_clause),
            lambda rf: bind(
                eval_expr(env, handler.op_clause),
                lambda pf: bind(
                    eval_expr(env, handler.traverse_clause),
                    lambda tf: bind(
                        eval_expr(env, state),
                        lambda sv: _eval_handled_body(
                            HandlerValue(handler.op_name, rf, pf, tf, depth), sv, env, body
                        ),
                    ),
                ),
            ),
        )
    if t is TableLit:
        return _eval_elems(env, e.elems, 0, (), _make_table)
    if t is TupleLit:
        return _eval_elems(env, e.elems, 0, (), _make_tuple)
    if t is If:
        cstep = eval_expr(env, e.cond)
        if type(cstep) is Done:
            return _eval_if(env, cstep.value, e.then, e.orelse)
        then, orelse = e.then, e.orelse
        return Suspended(
            cstep.request, _Bind(cstep.resume, lambda cv: _eval_if(env, cv, then, orelse))
        )
    if t is CaseEither:
        sstep = eval_expr(env, e.scrutinee)
        if type(sstep) is Done:
            return _eval_case(env, sstep.value, e.left_var, e.left_body, e.right_var, e.right_body)
        lv, lb, rv, rb = e.left_var, e.left_body, e.right_var, e.right_body
        return Suspended(
            sstep.request, _Bind(sstep.resume, lambda sv: _eval_case(env, sv, lv, lb, rv, rb))
        )
    raise EvalError(f"cannot evaluate expression of type {type(e).__name__}")


def _make_table(vs: tuple[Value, ...]) -> Step:
    return Done(TableV(vs))


def _make_tuple(vs: tuple[Value, ...]) -> Step:
    return Done(TupleV(vs))


def _raise_loop(env: Env, index_var: str, size: Value, body: Expr) -> Step:
    if not isinstance(size, IntV) or size.value < 0:
        raise EvalError("for size not a non-negative integer")
    return Suspended(LoopReq(size.value, Closure(index_var, body, env)), _identity_chain)


def _eval_handled_body(h: HandlerValue, state: Value, env: Env, body: Expr) -> Step:
    if _LOCAL.sink is None:
        return dispatch_handle(h, state, eval_expr(env, body))
    with trace.at_depth(h.depth + 1):
        step = eval_expr(env, body)
    return dispatch_handle(h, state, step)


def _eval_elems(
    env: Env,
    elems: tuple[Expr, ...],
    idx: int,
    acc: tuple[Value, ...],
    k: Callable[[tuple[Value, ...]], Step],
) -> Step:
    # Accumulates into a fresh tuple per element so a multi-shot resumption
    # replaying the tail never observes another replay's elements.
    if idx == len(elems):
        return k(acc)
    return bind(
        eval_expr(env, elems[idx]),
        lambda v: _eval_elems(env, elems, idx + 1, acc + (v,), k),
    )


def _eval_if(env: Env, cond: Value, then: Expr, orelse: Expr) -> Step:
    if not isinstance(cond, BoolV):
        raise EvalError(f"if condition must be a boolean, got {print_value(cond)}")
    return eval_expr(env, then if cond.value else orelse)


def _eval_case(env: Env, scrut: Value, lv: str, lb: Expr, rv: str, rb: Expr) -> Step:
    match scrut:
        case LeftV(payload):
            return eval_expr(env.extend(lv, payload), lb)
        case RightV(payload):
            return eval_expr(env.extend(rv, payload), rb)
    raise EvalError(f"case scrutinee must be Left or Right, got {print_value(scrut)}")


# --------------------------------------------------------------------------
# Application


def apply_value(f: Value, arg: Value) -> Step:
    match f:
        case Closure(param, body, env):
            trace.emit("app", param)
            return eval_expr(env.extend(param, arg), body)
        case TableV(elems):
            if not isinstance(arg, IntV):
                raise EvalError("table index must be an integer")
            if not 0 <= arg.value < len(elems):
                raise EvalError("index out of bounds")
            trace.emit("index", str(arg.value))
            return Done(elems[arg.value])
        case BuiltinV(name, args):
            arity = BUILTIN_ARITY.get(name)
            if arity is None:
                raise EvalError(f"unknown builtin '{name}'")
            applied = args + (arg,)
            if len(applied) < arity:
                return Done(BuiltinV(name, applied))
            return _BUILTIN_IMPLS[name](applied)
        case OpResume(h, chain):
            return Done(OpResume1(h, chain, arg))
        case OpResume1(h, chain, state):
            return _resume_under(h, state, chain, arg)
        case LoopResume(h, chain):
            return Done(LoopResume1(h, chain, arg))
        case LoopResume1(h, chain, state):
            return _resume_under(h, state, chain, arg)
        case LoopBody(h, size, body_fn):
            if not isinstance(arg, TableV) or len(arg.elems) != size:
                raise EvalError("state table length mismatch")
            return Suspended(LoopReq(size, LoopIterFn(h, arg, body_fn)), _identity_chain)
        case LoopIterFn(h, states, body_fn):
            if not isinstance(arg, IntV) or not 0 <= arg.value < len(states.elems):
                raise EvalError("index out of bounds")
            with trace.at_depth(h.depth):
                trace.emit("index", str(arg.value))
            state_i = states.elems[arg.value]
            with trace.at_depth(h.depth + 1):
                step = apply_value(body_fn, arg)
            return dispatch_handle(h, state_i, step)
    raise EvalError(f"applied non-function: {print_value(f)}")


def apply_many(f: Value, *args: Value) -> Step:
    step = Done(f)
    for a in args:
        step = bind(step, lambda g, a=a: apply_value(g, a))
    return step


# --------------------------------------------------------------------------
# Handler dispatch


def dispatch_handle(h: HandlerValue, state: Value, step: Step) -> Step:
    """Interpret the outcome of a handled body under handler ``h``."""
    if isinstance(step, Done):
        with trace.at_depth(h.depth):
            trace.emit("return", h.op_name)
            return apply_many(h.return_fn, state, step.value)
    req = step.request
    if isinstance(req, OpReq):
        if req.op_name == h.op_name:
            with trace.at_depth(h.depth):
                trace.emit("perform", req.op_name)
                k = OpResume(h, step.resume)
                return apply_many(h.op_fn, state, req.arg, k)
        # Another handler's operation: forward outward, but keep this frame
        # (with its current state) wrapped around the continuation.
        return Suspended(req, _ForwardChain(h, state, step.resume))
    # Loop requests are intercepted by every frame they reach.
    with trace.at_depth(h.depth):
        trace.emit("traverse", f"{h.op_name} n={req.size}")
        loop_fn = LoopBody(h, req.size, req.body_fn)
        k = LoopResume(h, step.resume)
        return apply_many(h.traverse_fn, IntV(req.size), state, loop_fn, k)
