"""Host builtins and the prelude of standard handlers.

Builtins register themselves with the machine's registry at import time.
All builtins are pure; ``reduce`` is the only one that calls back into the
evaluator (its combine argument is a program-level function and may itself
suspend on an operation).
"""

from __future__ import annotations

import itertools
import operator
from typing import Callable

from .errors import EvalError
from .machine import Done, Step, apply_many, bind, register_builtin
from .syntax import (
    BoolV,
    FloatV,
    IntV,
    KeyV,
    LeftV,
    RightV,
    StrV,
    TableV,
    TupleV,
    Value,
    print_value,
    value_eq,
)

# --------------------------------------------------------------------------
# Splittable pseudo-random number generation.
#
# Keys are 64-bit; splitting and sampling are pure functions of the key, so
# identical keys always produce identical streams, bit-exact on every
# platform. The mixing function is the SplitMix64 finalizer.

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _finalize(z: int) -> int:
    z &= _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def split_key_bits(bits: int, n: int) -> list[int]:
    return [_finalize(bits ^ ((_GAMMA * (i + 1)) & _MASK64)) for i in range(n)]


def uniform_from_bits(bits: int) -> float:
    return (_finalize(bits) >> 11) * 2.0**-53


def _key_bits(v: Value, who: str) -> int:
    # Integer seeds are accepted wherever a key is expected, so programs can
    # write `runRandom 42 ...` without a key constructor.
    if isinstance(v, KeyV):
        return v.bits
    if isinstance(v, IntV):
        return v.value & _MASK64
    raise EvalError(f"{who} expects a key, got {print_value(v)}")


# --------------------------------------------------------------------------
# Builtin implementations


def _num_op(name: str, op: Callable) -> Callable[[tuple[Value, ...]], Step]:
    def impl(args: tuple[Value, ...]) -> Step:
        a, b = args
        if isinstance(a, IntV) and isinstance(b, IntV):
            return Done(IntV(op(a.value, b.value)))
        if isinstance(a, FloatV) and isinstance(b, FloatV):
            return Done(FloatV(op(a.value, b.value)))
        raise EvalError(
            f"'{name}' needs two ints or two floats, got {print_value(a)} and {print_value(b)}"
        )

    return impl


def _num_cmp(name: str, op: Callable) -> Callable[[tuple[Value, ...]], Step]:
    def impl(args: tuple[Value, ...]) -> Step:
        a, b = args
        if isinstance(a, IntV) and isinstance(b, IntV):
            return Done(BoolV(op(a.value, b.value)))
        if isinstance(a, FloatV) and isinstance(b, FloatV):
            return Done(BoolV(op(a.value, b.value)))
        raise EvalError(
            f"'{name}' needs two ints or two floats, got {print_value(a)} and {print_value(b)}"
        )

    return impl


def _div(args: tuple[Value, ...]) -> Step:
    a, b = args
    if isinstance(a, FloatV) and isinstance(b, FloatV):
        if b.value == 0.0:
            raise EvalError("division by zero")
        return Done(FloatV(a.value / b.value))
    raise EvalError(f"'/' needs two floats, got {print_value(a)} and {print_value(b)}")


def _eq(args: tuple[Value, ...]) -> Step:
    return Done(BoolV(value_eq(args[0], args[1])))


def _str_concat(args: tuple[Value, ...]) -> Step:
    a, b = args
    if isinstance(a, StrV) and isinstance(b, StrV):
        return Done(StrV(a.value + b.value))
    raise EvalError(f"'++' needs two strings, got {print_value(a)} and {print_value(b)}")


def _length(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TableV):
        raise EvalError(f"length expects a table, got {print_value(t)}")
    return Done(IntV(len(t.elems)))


def _fst(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TupleV):
        raise EvalError(f"fst expects a tuple, got {print_value(t)}")
    return Done(t.elems[0])


def _snd(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TupleV):
        raise EvalError(f"snd expects a tuple, got {print_value(t)}")
    return Done(t.elems[1])


def _concat(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TableV):
        raise EvalError(f"concat expects a table of tables, got {print_value(t)}")
    flat: list[Value] = []
    for inner in t.elems:
        if not isinstance(inner, TableV):
            raise EvalError(f"concat expects a table of tables, got element {print_value(inner)}")
        flat.extend(inner.elems)
    return Done(TableV(tuple(flat)))


def _to_string(args: tuple[Value, ...]) -> Step:
    (v,) = args
    if not isinstance(v, IntV):
        raise EvalError(f"toString expects an int, got {print_value(v)}")
    return Done(StrV(str(v.value)))


def _reduce(args: tuple[Value, ...]) -> Step:
    f, t = args
    if not isinstance(t, TableV):
        raise EvalError(f"reduce expects a table, got {print_value(t)}")
    elems = t.elems
    if not elems:
        raise EvalError("reduce of empty table")

    # Balanced binary tree; the left subtree holds ceil(n/2) elements, so an
    # associative combine gives the same result as a left fold.
    def tree(lo: int, hi: int) -> Step:
        if hi - lo == 1:
            return Done(elems[lo])
        mid = lo + (hi - lo + 1) // 2
        return bind(
            tree(lo, mid),
            lambda a: bind(tree(mid, hi), lambda b: apply_many(f, a, b)),
        )

    return tree(0, len(elems))


def _first_failure(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TableV):
        raise EvalError(f"firstFailure expects a table, got {print_value(t)}")
    payloads: list[Value] = []
    for v in t.elems:
        if isinstance(v, LeftV):
            return Done(v)
        if isinstance(v, RightV):
            payloads.append(v.payload)
        else:
            raise EvalError("firstFailure: not an Either")
    return Done(RightV(TableV(tuple(payloads))))


def _cartesian_prod(args: tuple[Value, ...]) -> Step:
    (t,) = args
    if not isinstance(t, TableV):
        raise EvalError(f"cartesianProd expects a table of tables, got {print_value(t)}")
    pools = []
    for inner in t.elems:
        if not isinstance(inner, TableV):
            raise EvalError(
                f"cartesianProd expects a table of tables, got element {print_value(inner)}"
            )
        pools.append(inner.elems)
    # itertools.product varies the last coordinate fastest, matching the
    # mixed-radix order of the contract.
    rows = tuple(TableV(row) for row in itertools.product(*pools))
    return Done(TableV(rows))


def _split_key(args: tuple[Value, ...]) -> Step:
    key, n = args
    bits = _key_bits(key, "splitKey")
    if not isinstance(n, IntV) or n.value < 0:
        raise EvalError(f"splitKey expects a non-negative count, got {print_value(n)}")
    return Done(TableV(tuple(KeyV(k) for k in split_key_bits(bits, n.value))))


def _gen_uniform(args: tuple[Value, ...]) -> Step:
    (key,) = args
    return Done(FloatV(uniform_from_bits(_key_bits(key, "genUniform"))))


def _left(args: tuple[Value, ...]) -> Step:
    return Done(LeftV(args[0]))


def _right(args: tuple[Value, ...]) -> Step:
    return Done(RightV(args[0]))


_BUILTINS: list[tuple[str, int, Callable[[tuple[Value, ...]], Step]]] = [
    ("+", 2, _num_op("+", operator.add)),
    ("-", 2, _num_op("-", operator.sub)),
    ("*", 2, _num_op("*", operator.mul)),
    ("/", 2, _div),
    ("==", 2, _eq),
    ("<", 2, _num_cmp("<", operator.lt)),
    ("<=", 2, _num_cmp("<=", operator.le)),
    ("++", 2, _str_concat),
    ("length", 1, _length),
    ("fst", 1, _fst),
    ("snd", 1, _snd),
    ("concat", 1, _concat),
    ("toString", 1, _to_string),
    ("reduce", 2, _reduce),
    ("firstFailure", 1, _first_failure),
    ("cartesianProd", 1, _cartesian_prod),
    ("splitKey", 2, _split_key),
    ("genUniform", 1, _gen_uniform),
    ("Left", 1, _left),
    ("Right", 1, _right),
]

for _name, _arity, _impl in _BUILTINS:
    register_builtin(_name, _arity, _impl)

BUILTIN_NAMES = frozenset(name for name, _, _ in _BUILTINS)


# --------------------------------------------------------------------------
# Prelude: the standard handlers, written in the surface language and
# implicitly prepended to every program (unless --no-prelude).

PRELUDE_SOURCE = """\
// Standard handlers. User programs may shadow any of these names.

// runAccum f mempty body: accumulate contributions over an associative
// combine `f` with identity `mempty`; returns (result, total). Loop
// iterations each accumulate into a private copy of the identity and the
// per-iteration totals are combined with a balanced reduce, so the loop
// body can run in parallel. An empty loop contributes mempty directly,
// since reducing an empty table is undefined.
runAccum = \\(<>). \\mempty. \\f.
  handle { return |-> \\s.\\x. (x, s),
           accum |-> \\s.\\x.\\k. k (s <> x) (),
           traverse |-> (\\n.\\s.\\l.\\k.
              pairs <- l (for i:n. mempty);
              results <- (for i:n. fst (pairs i));
              outs <- (for i:n. snd (pairs i));
              out <- (if n == 0 then mempty else reduce (<>) outs);
              k (s <> out) results)
         } mempty (f ())

// runWeakExcept body: exceptions that abort the code after a loop but
// cannot interrupt sibling iterations already running. Returns Right of
// the result, or the lowest-index Left thrown inside a loop.
runWeakExcept = \\f.
  handle { return |-> \\_.\\x. Right x,
           throw |-> \\_.\\err.\\k. Left err,
           traverse |-> (\\n.\\_.\\l.\\k.
              eithers <- l (for i:n. ());
              combined <- firstFailure eithers;
              case combined of
                Left err -> Left err
              | Right res -> k () res)
         } () (f ())

// runRandom seed body: deterministic pseudo-random numbers from a
// splittable key (an integer seed is accepted). Each sequential sample
// splits the current key; a loop splits one independent key per
// iteration, so iterations can run in parallel yet stay reproducible.
runRandom = \\seed. \\f.
  handle { return |-> \\key.\\x. x,
           sampleUniform |-> (\\key.\\_.\\k.
              keys <- splitKey key 2;
              u <- genUniform (keys 0);
              k (keys 1) u),
           traverse |-> (\\n.\\key.\\l.\\k.
              keys <- splitKey key 2;
              results <- l (splitKey (keys 0) n);
              k (keys 1) results)
         } seed (f ())

// runAmb body: nondeterministic choice over tables of options; returns
// the flat table of every possible outcome. The resumption is invoked
// once per option (inside a loop, so branches may run in parallel), and
// each clause flattens the resulting bundle of per-branch tables with
// concat, keeping the final table flat rather than nested per choice.
runAmb = \\f.
  handle { return |-> \\_.\\x. [x],
           amb |-> (\\_.\\options.\\k.
              n <- length options;
              branches <- (for i:n. k () (options i));
              concat branches),
           traverse |-> (\\n.\\_.\\l.\\k.
              results <- l (for i:n. ());
              productElts <- cartesianProd results;
              m <- length productElts;
              branches <- (for i:m. k () (productElts i));
              concat branches)
         } () (f ())
"""
