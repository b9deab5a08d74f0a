"""Deterministic discrete-event core.

Time is an integer count of nanoseconds. Events that share a timestamp fire
in the order they were scheduled.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable

from .errors import SchedulingInPast

EventId = int


class Engine:
    """Virtual clock plus an ordered future-event queue."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Callable[..., Any], tuple]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self.scheduled = 0
        self.fired = 0
        self.cancelled = 0

    def schedule(self, fire_at: int, action: Callable[..., Any], *args: Any) -> EventId:
        if fire_at < self.now:
            raise SchedulingInPast(f"event at {fire_at} ns scheduled when clock is {self.now} ns")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (int(fire_at), seq, action, args))
        self.scheduled += 1
        return seq

    def after(self, delay: int, action: Callable[..., Any], *args: Any) -> EventId:
        return self.schedule(self.now + delay, action, *args)

    def cancel(self, event_id: EventId) -> bool:
        """Cancel a pending event. Returns False if it already fired or was cancelled."""
        if event_id in self._cancelled or event_id >= self._seq:
            return False
        if not any(e[1] == event_id for e in self._queue):
            return False
        self._cancelled.add(event_id)
        self.cancelled += 1
        return True

    def pending(self) -> int:
        return len(self._queue) - len(self._cancelled)

    def step(self) -> bool:
        """Fire the next live event. Returns False when the queue is empty."""
        while self._queue:
            fire_at, seq, action, args = heapq.heappop(self._queue)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            self.now = fire_at
            self.fired += 1
            action(*args)
            return True
        return False

    def run_until_idle(self) -> int:
        """Fire every event in (time, sequence) order; return the final clock."""
        while self.step():
            pass
        return self.now
