"""Seeded discrete-event scheduler and simulated message network."""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable


class Scheduler:
    """Virtual-time event loop; ties break by insertion order, so runs are reproducible."""

    def __init__(self):
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable, tuple]] = []
        self._seq = 0

    def at(self, when: float, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (max(when, self.now), self._seq, fn, args))
        self._seq += 1

    def after(self, delay: float, fn: Callable, *args) -> None:
        self.at(self.now + delay, fn, *args)

    def next_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def run_until(self, t: float) -> None:
        while self._queue and self._queue[0][0] <= t:
            when, _, fn, args = heapq.heappop(self._queue)
            self.now = when
            fn(*args)
        self.now = max(self.now, t)

    def pending(self) -> int:
        return len(self._queue)


class Trace:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.events: list[dict[str, Any]] = []

    def record(self, time: float, node: int | None, event: str, **detail) -> None:
        if self.enabled:
            self.events.append({"time": round(time, 6), "node": node, "event": event, **detail})

    def of(self, event: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(e, sort_keys=True) + "\n")


@dataclass
class NetworkConditions:
    delay_range: tuple[float, float] = (0.001, 0.010)
    drop_rate: float = 0.0


class SimNetwork:
    """Delivers messages between node ids with random delay, drops, partitions and crashes."""

    def __init__(self, scheduler: Scheduler, rng: random.Random,
                 conditions: NetworkConditions | None = None):
        self.scheduler = scheduler
        self.rng = rng
        self.conditions = conditions or NetworkConditions()
        self.handlers: dict[int, Callable[[int, Any], None]] = {}
        self.crashed: set[int] = set()
        self._group: dict[int, int] = {}

    def register(self, node_id: int, handler: Callable[[int, Any], None]) -> None:
        self.handlers[node_id] = handler

    def partition(self, groups: Iterable[Iterable[int]]) -> None:
        self._group = {}
        for gi, members in enumerate(groups):
            for m in members:
                self._group[m] = gi

    def heal(self) -> None:
        self._group = {}

    def connected(self, a: int, b: int) -> bool:
        if a in self.crashed or b in self.crashed:
            return False
        return self._group.get(a, -1) == self._group.get(b, -1)

    def send(self, src: int, dst: int, msg: Any) -> None:
        if not self.connected(src, dst):
            return
        if self.conditions.drop_rate and self.rng.random() < self.conditions.drop_rate:
            return
        lo, hi = self.conditions.delay_range
        self.scheduler.after(self.rng.uniform(lo, hi), self._deliver, src, dst, msg)

    def _deliver(self, src: int, dst: int, msg: Any) -> None:
        # a partition or crash that happened in flight also loses the message
        if self.connected(src, dst):
            self.handlers[dst](src, msg)
