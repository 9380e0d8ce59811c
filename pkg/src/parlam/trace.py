"""Reduction-rule trace events and the per-thread machine context.

Trace events are buffered per evaluation context (one buffer per loop
iteration) and merged in index order after each parallel region, so the
merged trace is identical no matter how iterations were scheduled.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

RULES = ("app", "index", "return", "perform", "traverse", "parallel")


@dataclass(frozen=True)
class TraceEvent:
    rule: str
    depth: int
    iter_path: tuple[int, ...]
    detail: str

    def format(self) -> str:
        path = ".".join(str(i) for i in self.iter_path) if self.iter_path else "-"
        return f"{path}\t{self.rule}\t{self.depth}\t{self.detail}"


class _MachineLocal(threading.local):
    """Dynamic evaluation context: the active trace buffer (None when
    tracing is off) and the current handler-nesting depth."""

    def __init__(self):
        self.sink: Optional[list[TraceEvent]] = None
        self.depth: int = 0


_LOCAL = _MachineLocal()


def emit(rule: str, detail: str = "") -> None:
    sink = _LOCAL.sink
    if sink is not None:
        sink.append(TraceEvent(rule, _LOCAL.depth, (), detail))


def tracing_enabled() -> bool:
    return _LOCAL.sink is not None


def current_depth() -> int:
    return _LOCAL.depth


@contextmanager
def at_depth(depth: int) -> Iterator[None]:
    prev = _LOCAL.depth
    _LOCAL.depth = depth
    try:
        yield
    finally:
        _LOCAL.depth = prev


@contextmanager
def fresh_context(sink: Optional[list[TraceEvent]]) -> Iterator[None]:
    """Install a fresh context (new buffer, depth 0) for one loop iteration
    or one top-level run; restores the previous context on exit."""
    prev_sink, prev_depth = _LOCAL.sink, _LOCAL.depth
    _LOCAL.sink = sink
    _LOCAL.depth = 0
    try:
        yield
    finally:
        _LOCAL.sink = prev_sink
        _LOCAL.depth = prev_depth


def extend_current(events: list[TraceEvent]) -> None:
    sink = _LOCAL.sink
    if sink is not None:
        sink.extend(events)
