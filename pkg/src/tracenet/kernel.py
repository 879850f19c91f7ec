"""Deterministic discrete-event kernel with integer-nanosecond time."""

from __future__ import annotations

import heapq
from fractions import Fraction


class SchedulingError(RuntimeError):
    pass


def round_half_up(x: Fraction | int) -> int:
    """Round a non-negative rational to the nearest integer, halves going up."""
    x = Fraction(x)
    return (x.numerator * 2 + x.denominator) // (2 * x.denominator)


class Kernel:
    """Time-ordered event queue.

    Events run in (time, seq) order where seq is assigned at scheduling, so
    equal-time events run FIFO. A handler is any callable; ``args`` are passed
    through untouched.
    """

    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.executed = 0
        self.trace_log: list[tuple[int, int]] | None = None

    def schedule(self, time_ns: int, handler, *args) -> None:
        if time_ns < self.now:
            raise SchedulingError(f"cannot schedule at {time_ns} < now {self.now}")
        heapq.heappush(self._queue, (time_ns, self._seq, handler, args))
        self._seq += 1

    def pending(self) -> int:
        return len(self._queue)

    def run_until_idle(self) -> int:
        """Process events until none remain; returns the last event time (0 if none ran)."""
        last = 0 if self.executed == 0 else self.now
        queue = self._queue
        pop = heapq.heappop
        log = self.trace_log
        n = 0
        while queue:
            t, seq, handler, args = pop(queue)
            self.now = t
            if log is not None:
                log.append((t, seq))
            handler(*args)
            n += 1
            last = t
        self.executed += n
        return last
