"""Top-level driver: runs computations to completion and executes
handler-free loops over all of their iterations.

A loop request that escapes every handler frame has fully independent
iterations by construction, so the driver may evaluate them on concurrent
workers. Results always join in index order, per-iteration trace buffers
merge in index order, and the lowest-index failing iteration wins error
reporting, so observable behavior is identical for any worker count.
"""

from __future__ import annotations

import sys
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import machine, trace
from .errors import EvalError
from .syntax import EMPTY_ENV, Expr, IntV, TableV, Value
from .trace import TraceEvent

_MIN_RECURSION_LIMIT = 20000
_THREAD_STACK_BYTES = 64 << 20

try:
    threading.stack_size(_THREAD_STACK_BYTES)
except (ValueError, RuntimeError):  # pragma: no cover - platform dependent
    pass


class ExecMode(Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class RunConfig:
    workers: int = 1
    trace_enabled: bool = False
    mode: ExecMode = ExecMode.PARALLEL

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


class _WorkerBudget:
    """Process-wide worker allowance for one run. Extra chunks of loop
    iterations run on new threads only while permits remain; everything
    else runs inline, so nested parallel regions share one budget and can
    never deadlock waiting for each other."""

    def __init__(self, extra: int):
        self._sem = threading.Semaphore(extra) if extra > 0 else None

    def acquire_up_to(self, want: int) -> int:
        if self._sem is None or want <= 0:
            return 0
        got = 0
        while got < want and self._sem.acquire(blocking=False):
            got += 1
        return got

    def release(self) -> None:
        assert self._sem is not None
        self._sem.release()


def merge_traces(per_iteration: list[Optional[list[TraceEvent]]]) -> list[TraceEvent]:
    """Merge per-iteration event buffers: iteration 0's events first (each
    with its iteration index prefixed to the path), then iteration 1's, and
    so on, regardless of completion order."""
    merged: list[TraceEvent] = []
    for i, events in enumerate(per_iteration):
        if not events:
            continue
        for ev in events:
            merged.append(TraceEvent(ev.rule, ev.depth, (i,) + ev.iter_path, ev.detail))
    return merged


def _chunk_bounds(n: int, chunks: int) -> list[tuple[int, int]]:
    base, extra = divmod(n, chunks)
    bounds = []
    lo = 0
    for c in range(chunks):
        hi = lo + base + (1 if c < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def _run_loop(n: int, body_fn: Value, config: RunConfig, budget: _WorkerBudget) -> tuple[Value, ...]:
    trace.emit("parallel", f"n={n}")
    if n == 0:
        return ()
    tracing = trace.tracing_enabled()
    results: list[Optional[Value]] = [None] * n
    errors: list[Optional[Exception]] = [None] * n
    sinks: list[Optional[list[TraceEvent]]] = [[] if tracing else None for _ in range(n)]

    def run_iteration(i: int) -> None:
        with trace.fresh_context(sinks[i]):
            try:
                step = machine.apply_value(body_fn, IntV(i))
                results[i] = _drive(step, config, budget)
            except Exception as exc:  # joined below; lowest index reported
                errors[i] = exc

    def run_range(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            run_iteration(i)

    concurrent = config.mode is ExecMode.PARALLEL and config.workers > 1 and n > 1
    if not concurrent:
        run_range(0, n)
    else:
        extra = budget.acquire_up_to(min(config.workers, n) - 1)
        if extra == 0:
            run_range(0, n)
        else:
            bounds = _chunk_bounds(n, extra + 1)

            def worker(lo: int, hi: int) -> None:
                try:
                    run_range(lo, hi)
                finally:
                    budget.release()

            threads = [
                threading.Thread(target=worker, args=b, daemon=True) for b in bounds[1:]
            ]
            for t in threads:
                t.start()
            run_range(*bounds[0])
            for t in threads:
                t.join()

    if tracing:
        trace.extend_current(merge_traces(sinks))
    for err in errors:
        if err is not None:
            raise err
    return tuple(results)  # type: ignore[arg-type]


def _drive(step: machine.Step, config: RunConfig, budget: _WorkerBudget) -> Value:
    while True:
        if isinstance(step, machine.Done):
            return step.value
        request = step.request
        if isinstance(request, machine.OpReq):
            raise EvalError(f"unhandled operation {request.op_name}")
        table = _run_loop(request.size, request.body_fn, config, budget)
        step = step.resume(TableV(table))


def run_program(expr: Expr, config: RunConfig = RunConfig()) -> tuple[Value, list[TraceEvent]]:
    """Evaluate a closed core expression to a value under ``config``.

    Returns the final value and the merged trace (empty unless tracing was
    enabled).
    """
    if sys.getrecursionlimit() < _MIN_RECURSION_LIMIT:
        sys.setrecursionlimit(_MIN_RECURSION_LIMIT)
    budget = _WorkerBudget(config.workers - 1 if config.mode is ExecMode.PARALLEL else 0)
    sink: Optional[list[TraceEvent]] = [] if config.trace_enabled else None
    with trace.fresh_context(sink):
        step = machine.eval_expr(EMPTY_ENV, expr)
        value = _drive(step, config, budget)
    return value, (sink if sink is not None else [])
