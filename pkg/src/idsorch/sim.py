"""
Virtual clocks and a small discrete-event kernel.

Processes are generators that yield a delay in seconds; the kernel resumes
them that much later on the virtual clock.  Simultaneous events run in
``(tick, host, kind, insertion order)`` order, so every run is reproducible.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable, Generator, Optional

from .model import TICKS_PER_SECOND, to_ticks

Process = Generator[float, None, Any]


class ManualClock:
    """Clock advanced explicitly; used when driving components without a kernel."""

    def __init__(self, start: float = 0.0) -> None:
        self.ticks = to_ticks(start)

    def now(self) -> float:
        return self.ticks / TICKS_PER_SECOND

    def now_ticks(self) -> int:
        return self.ticks

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot move the clock backwards")
        self.ticks += to_ticks(seconds)

    def advance_to(self, seconds: float) -> None:
        target = to_ticks(seconds)
        if target < self.ticks:
            raise ValueError(f"cannot move clock backwards from {self.now()} to {seconds}")
        self.ticks = target


def drive(proc: Process, clock: ManualClock) -> Any:
    """Run a process to completion, advancing ``clock`` by each yielded delay."""
    try:
        delay = next(proc)
        while True:
            clock.advance(delay)
            delay = proc.send(None)
    except StopIteration as stop:
        return stop.value


class Simulator:
    def __init__(self) -> None:
        self.ticks = 0
        self._heap: list[tuple[int, str, str, int, Callable[..., None], tuple]] = []
        self._seq = itertools.count()
        self.processed = 0

    def now(self) -> float:
        return self.ticks / TICKS_PER_SECOND

    def now_ticks(self) -> int:
        return self.ticks

    def at(self, ticks: int, host: str, kind: str, fn: Callable[..., None], *args: Any) -> None:
        if ticks < self.ticks:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (ticks, host, kind, next(self._seq), fn, args))

    def after(self, seconds: float, host: str, kind: str, fn: Callable[..., None], *args: Any) -> None:
        self.at(self.ticks + to_ticks(seconds), host, kind, fn, *args)

    def spawn(self, proc: Process, host: str, kind: str = "proc", delay: float = 0.0) -> None:
        self.after(delay, host, kind, self._step, proc, host, kind)

    def _step(self, proc: Process, host: str, kind: str) -> None:
        try:
            delay = next(proc)
        except StopIteration:
            return
        self.after(delay, host, kind, self._step, proc, host, kind)

    def run(self, until: Optional[float] = None) -> None:
        """Process events strictly before ``until`` seconds (all events if None)."""
        limit = None if until is None else to_ticks(until)
        heap = self._heap
        while heap and (limit is None or heap[0][0] < limit):
            ticks, _, _, _, fn, args = heapq.heappop(heap)
            self.ticks = ticks
            fn(*args)
            self.processed += 1
        if limit is not None:
            self.ticks = max(self.ticks, limit)
