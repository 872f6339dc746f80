"""Orderer front-ends.

Both orderers are driven by an external clock: callers ``submit`` at the
current time and call ``advance(now)`` to let timers fire; ``advance``
returns the ordered batches that became final, numbered 1, 2, ... with
no gaps (height 0 is the genesis block, created at bootstrap).
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass
from typing import Any

from ..errors import ConfigInvalid
from .config import OrdererConfig
from .cutter import BlockCutter
from .raft import LogEntry, RaftNode, Role
from .sim import NetworkConditions, Scheduler, SimNetwork, Trace


@dataclass(frozen=True)
class Ack:
    status: str              # Accepted | NotLeader | Unavailable
    leader_hint: int | None = None

    @property
    def accepted(self) -> bool:
        return self.status == "Accepted"


ACCEPTED = Ack("Accepted")
UNAVAILABLE = Ack("Unavailable")


@dataclass(frozen=True)
class OrderedBatch:
    number: int
    txs: tuple


class SoloOrderer:
    """Single ordering node: one block cutter, no replication."""

    def __init__(self, config: OrdererConfig, start_number: int = 1):
        self.config = config
        self.cutter: BlockCutter = BlockCutter(config.batch_max_count, config.batch_timeout)
        self._next_number = start_number
        self._ready: list[OrderedBatch] = []
        self._lock = threading.Lock()
        self.now = 0.0

    def _emit(self, batch) -> None:
        self._ready.append(OrderedBatch(self._next_number, tuple(batch)))
        self._next_number += 1

    def submit(self, tx: Any, now: float | None = None) -> Ack:
        with self._lock:
            if now is not None:
                self.now = max(self.now, now)
            for batch in self.cutter.add(tx, self.now):
                self._emit(batch)
            return ACCEPTED

    def advance(self, now: float) -> list[OrderedBatch]:
        with self._lock:
            self.now = max(self.now, now)
            batch = self.cutter.poll(self.now)
            if batch:
                self._emit(batch)
            out, self._ready = self._ready, []
            return out

    def next_wakeup(self) -> float | None:
        with self._lock:
            return self.cutter.deadline()

    def leader(self) -> int | None:
        return 0


class RaftOrderer:
    """A Raft ordering cluster running on the in-process simulated network."""

    def __init__(self, config: OrdererConfig, seed: int = 0,
                 conditions: NetworkConditions | None = None, trace: Trace | None = None,
                 start_number: int = 1):
        if config.mode != "Raft":
            raise ConfigInvalid("RaftOrderer needs mode='Raft'")
        self.config = config
        self.sched = Scheduler()
        self.trace = trace or Trace(enabled=False)
        rng = random.Random(seed)
        self.net = SimNetwork(self.sched, random.Random(rng.getrandbits(64)), conditions)
        ids = list(range(config.cluster_size))
        self.nodes = [RaftNode(i, ids, config, self.sched, self.net,
                               random.Random(rng.getrandbits(64)), self.trace,
                               self._on_commit, self._on_leader)
                      for i in ids]
        # index -> entry, the first time any node committed it
        self.committed: dict[int, LogEntry] = {}
        self.leaders_by_term: dict[int, int] = {}
        self.violations: list[str] = []
        self._delivered_index = 0
        self._next_number = start_number
        self._lock = threading.RLock()
        for n in self.nodes:
            n.start()

    def _on_commit(self, node_id: int, index: int, entry: LogEntry) -> None:
        seen = self.committed.get(index)
        if seen is None:
            self.committed[index] = entry
        elif seen != entry:
            self.violations.append(f"node {node_id} committed a different entry at index {index}")

    def _on_leader(self, node_id: int, term: int) -> None:
        prev = self.leaders_by_term.setdefault(term, node_id)
        if prev != node_id:
            self.violations.append(f"two leaders in term {term}: {prev} and {node_id}")

    def leader(self) -> int | None:
        """The live leader with the highest term, if any."""
        best = None
        for n in self.nodes:
            if n.alive and n.role is Role.LEADER:
                if best is None or n.state.current_term > best.state.current_term:
                    best = n
        return best.id if best else None

    def submit_to(self, node_id: int, tx: Any) -> Ack:
        node = self.nodes[node_id]
        with self._lock:
            if not node.alive:
                return UNAVAILABLE
            if node.accept(tx):
                return ACCEPTED
            return Ack("NotLeader", node.leader_hint)

    def submit(self, tx: Any, now: float | None = None) -> Ack:
        with self._lock:
            if now is not None:
                self.sched.run_until(now)
            leader = self.leader()
            if leader is None:
                return UNAVAILABLE
            return self.submit_to(leader, tx)

    def advance(self, now: float) -> list[OrderedBatch]:
        with self._lock:
            self.sched.run_until(now)
            return self._collect()

    def _collect(self) -> list[OrderedBatch]:
        out = []
        while self._delivered_index + 1 in self.committed:
            self._delivered_index += 1
            entry = self.committed[self._delivered_index]
            if entry.batch:
                out.append(OrderedBatch(self._next_number, entry.batch))
                self._next_number += 1
        return out

    def next_wakeup(self) -> float | None:
        with self._lock:
            return self.sched.next_time()

    def run_until_leader(self, limit: float = 10.0) -> int | None:
        with self._lock:
            step = self.config.heartbeat_interval / 2
            while self.leader() is None and self.sched.now < limit:
                self.sched.run_until(self.sched.now + step)
            return self.leader()

    @property
    def now(self) -> float:
        return self.sched.now

    # fault injection
    def crash(self, node_id: int) -> None:
        with self._lock:
            self.nodes[node_id].crash()
            self.net.crashed.add(node_id)

    def restart(self, node_id: int) -> None:
        with self._lock:
            self.net.crashed.discard(node_id)
            self.nodes[node_id].restart()

    def partition(self, groups) -> None:
        with self._lock:
            self.net.partition(groups)
            self.trace.record(self.sched.now, None, "partition", groups=[list(g) for g in groups])

    def heal(self) -> None:
        with self._lock:
            self.net.heal()
            self.trace.record(self.sched.now, None, "heal")


def make_orderer(config: OrdererConfig, seed: int = 0, **kwargs):
    if config.mode == "Solo":
        return SoloOrderer(config, **{k: v for k, v in kwargs.items() if k == "start_number"})
    if config.mode == "Raft":
        return RaftOrderer(config, seed, **kwargs)
    raise ConfigInvalid("Kafka ordering is not implemented; use Solo or Raft")
