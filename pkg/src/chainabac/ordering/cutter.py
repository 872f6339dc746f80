"""Batching of pending transactions into block candidates."""

from __future__ import annotations

from typing import Generic, TypeVar

T = TypeVar("T")


class BlockCutter(Generic[T]):
    """Cuts when ``max_count`` items are pending or ``timeout`` has passed
    since the first pending item arrived.  Submission order is preserved."""

    def __init__(self, max_count: int, timeout: float):
        self.max_count = max_count
        self.timeout = timeout
        self.pending: list[T] = []
        self.first_arrival: float | None = None

    def add(self, item: T, now: float) -> list[list[T]]:
        if not self.pending:
            self.first_arrival = now
        self.pending.append(item)
        out = []
        while len(self.pending) >= self.max_count:
            out.append(self.pending[:self.max_count])
            self.pending = self.pending[self.max_count:]
            self.first_arrival = now if self.pending else None
        return out

    def deadline(self) -> float | None:
        if self.first_arrival is None:
            return None
        return self.first_arrival + self.timeout

    def poll(self, now: float) -> list[T] | None:
        """Emit the pending batch if its timeout has elapsed."""
        dl = self.deadline()
        if dl is not None and now >= dl:
            return self.cut()
        return None

    def cut(self) -> list[T] | None:
        if not self.pending:
            return None
        batch, self.pending, self.first_arrival = self.pending, [], None
        return batch

    def clear(self) -> list[T]:
        lost, self.pending, self.first_arrival = self.pending, [], None
        return lost


def cut_block(pending: list[T], max_count: int, timeout: float, first_arrival: float | None,
              now: float) -> list[T] | None:
    """Stateless form: the next candidate from ``pending`` (or None)."""
    if len(pending) >= max_count:
        return pending[:max_count]
    if pending and first_arrival is not None and now >= first_arrival + timeout:
        return list(pending)
    return None
