"""Discrete-event kernel: virtual millisecond clock and ordered dispatch."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import AppStopped, TimeRegression

Handler = Callable[["SimEvent"], Any]


@dataclass(order=True)
class SimEvent:
    fire_at: int
    seq: int
    kind: str = field(compare=False)
    handler: Handler | None = field(compare=False, default=None, repr=False)
    owner: str | None = field(compare=False, default=None)
    data: dict = field(compare=False, default_factory=dict)


class EventQueue:
    """Min-heap on ``(fire_at, seq)`` with lazy cancellation."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._live: dict[int, SimEvent] = {}

    def __len__(self):
        return len(self._live)

    def push(self, ev: SimEvent) -> None:
        heapq.heappush(self._heap, ev)
        self._live[ev.seq] = ev

    def _drop_dead(self) -> None:
        while self._heap and self._heap[0].seq not in self._live:
            heapq.heappop(self._heap)

    def peek(self) -> SimEvent | None:
        self._drop_dead()
        return self._heap[0] if self._heap else None

    def pop(self) -> SimEvent:
        self._drop_dead()
        ev = heapq.heappop(self._heap)
        del self._live[ev.seq]
        return ev

    def cancel(self, seq: int) -> bool:
        return self._live.pop(seq, None) is not None

    def pending(self) -> list[SimEvent]:
        return sorted(self._live.values())


class Kernel:
    """Single-threaded event loop.

    ``seed`` feeds the one pseudo-random generator (``self.rng``) that every
    stochastic part of the model draws from.
    """

    def __init__(self, seed: int = 0):
        self.now = 0
        self.queue = EventQueue()
        self.rng = random.Random(seed)
        self._seq = itertools.count()
        self._stopped_owners: set[str] = set()
        self.observers: list[Handler] = []
        self.dispatched = 0

    def schedule_event(self, fire_at: int, kind: str, handler: Handler | None = None,
                       *, owner: str | None = None, **data) -> int:
        if fire_at < self.now:
            raise TimeRegression(f"{kind} at {fire_at} < now {self.now}")
        if owner is not None and owner in self._stopped_owners:
            raise AppStopped(f"{owner} is stopped")
        ev = SimEvent(int(fire_at), next(self._seq), kind, handler, owner, data)
        self.queue.push(ev)
        return ev.seq

    def schedule_in(self, delay: int, kind: str, handler: Handler | None = None, **kw) -> int:
        return self.schedule_event(self.now + delay, kind, handler, **kw)

    def cancel_event(self, event_id: int) -> bool:
        return self.queue.cancel(event_id)

    def step(self) -> SimEvent | None:
        if not len(self.queue):
            return None
        ev = self.queue.pop()
        self.now = ev.fire_at
        self.dispatched += 1
        for obs in self.observers:
            obs(ev)
        if ev.handler is not None:
            ev.handler(ev)
        return ev

    def run_until(self, deadline: int) -> int:
        count = 0
        while True:
            head = self.queue.peek()
            if head is None or head.fire_at > deadline:
                return count
            self.step()
            count += 1

    def advance_to(self, t: int) -> None:
        """Move the clock forward with no dispatch; refuses to skip pending events."""
        head = self.queue.peek()
        if t < self.now:
            raise TimeRegression(f"advance to {t} < now {self.now}")
        if head is not None and head.fire_at < t:
            raise TimeRegression(f"pending event at {head.fire_at} before {t}")
        self.now = t

    # owner control used by the battery optimizer's stop-app verdict

    def stop_owner(self, owner: str) -> int:
        self._stopped_owners.add(owner)
        doomed = [ev.seq for ev in self.queue.pending() if ev.owner == owner]
        for seq in doomed:
            self.queue.cancel(seq)
        return len(doomed)

    def restart_owner(self, owner: str) -> None:
        self._stopped_owners.discard(owner)

    def is_stopped(self, owner: str) -> bool:
        return owner in self._stopped_owners
