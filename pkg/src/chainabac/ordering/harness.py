"""Seeded fault-injection scenarios for the Raft ordering cluster.

A scenario runs a cluster on the simulated network while a client keeps
submitting transactions, applies disjoint fault windows (crashes or
partitions, never touching more than a minority), and then checks the
safety properties against the resulting trace.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .config import OrdererConfig
from .service import RaftOrderer
from .sim import NetworkConditions, Trace


@dataclass
class Fault:
    kind: str            # "crash" or "partition"
    start: float
    end: float
    nodes: list[int] | str   # explicit ids, or "leader" to pick the leader at start time

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Scenario:
    seed: int
    cluster_size: int = 3
    duration: float = 4.5
    quiet: float = 1.5
    delay_range: tuple[float, float] = (0.001, 0.010)
    drop_rate: float = 0.0
    client_interval: float = 0.02
    retry_after: float = 0.6
    batch_max_count: int = 4
    batch_timeout: float = 0.05
    faults: list[Fault] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["delay_range"] = list(self.delay_range)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        d = dict(d)
        d["faults"] = [Fault(**f) for f in d.get("faults", [])]
        if "delay_range" in d:
            d["delay_range"] = tuple(d["delay_range"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_scenario(seed: int, cluster_size: int | None = None) -> Scenario:
    """Random minority faults; the first window always targets the leader."""
    rng = random.Random(seed)
    n = cluster_size or rng.choice([3, 5])
    f = (n - 1) // 2
    sc = Scenario(seed=seed, cluster_size=n,
                  drop_rate=rng.choice([0.0, 0.0, 0.02, 0.05]),
                  delay_range=(0.001, rng.choice([0.005, 0.010, 0.030])))
    t = rng.uniform(0.5, 0.9)
    end_of_faults = sc.duration - sc.quiet
    first = True
    while t < end_of_faults - 0.2:
        # the forced failover window outlasts several election timeouts
        length = rng.uniform(1.0, 1.4) if first else rng.uniform(0.3, 0.9)
        kind = rng.choice(["crash", "partition"])
        if first:
            nodes: list[int] | str = "leader"
        else:
            nodes = sorted(rng.sample(range(n), rng.randint(1, f)))
        sc.faults.append(Fault(kind, round(t, 4), round(min(t + length, end_of_faults), 4), nodes))
        first = False
        t += length + rng.uniform(0.1, 0.5)
    return sc


@dataclass
class ScenarioResult:
    scenario: Scenario
    violations: list[str]
    delivered: list[int]          # block numbers, in delivery order
    failovers: int
    submitted: int
    delivered_txs: int
    trace: Trace

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict[str, Any]:
        return {
            "seed": self.scenario.seed,
            "cluster_size": self.scenario.cluster_size,
            "ok": self.ok,
            "violations": self.violations,
            "blocks": len(self.delivered),
            "failovers": self.failovers,
            "submitted": self.submitted,
            "delivered_txs": self.delivered_txs,
        }


def run_scenario(sc: Scenario, trace_enabled: bool = True) -> ScenarioResult:
    cfg = OrdererConfig(mode="Raft", cluster_size=sc.cluster_size,
                        batch_max_count=sc.batch_max_count, batch_timeout=sc.batch_timeout)
    trace = Trace(enabled=trace_enabled)
    orderer = RaftOrderer(cfg, seed=sc.seed,
                          conditions=NetworkConditions(tuple(sc.delay_range), sc.drop_rate),
                          trace=trace)
    sched = orderer.sched
    violations: list[str] = []
    failover_targets: list[tuple[int, int]] = []   # (node, term it led) when a fault hit it

    # windows run one after another; a leader-targeted window waits for a
    # leader to exist, and later windows shift by the same delay so they
    # never overlap (overlap could exceed the minority bound)
    def fault_start(k: int) -> None:
        fault = sc.faults[k]
        if fault.nodes == "leader":
            leader = orderer.leader()
            if leader is None:
                sched.after(0.01, fault_start, k)
                return
            targets = [leader]
            failover_targets.append((leader, orderer.nodes[leader].state.current_term))
        else:
            targets = list(fault.nodes)
        trace.record(sched.now, None, "fault_start", kind=fault.kind, nodes=targets)
        if fault.kind == "crash":
            for t in targets:
                orderer.crash(t)
        else:
            rest = [i for i in range(sc.cluster_size) if i not in targets]
            orderer.partition([targets, rest])
        sched.after(fault.end - fault.start, fault_end, k, targets)

    def fault_end(k: int, targets: list[int]) -> None:
        fault = sc.faults[k]
        trace.record(sched.now, None, "fault_end", kind=fault.kind, nodes=targets)
        if fault.kind == "crash":
            for t in targets:
                orderer.restart(t)
        else:
            orderer.heal()
        if k + 1 < len(sc.faults):
            sched.after(sc.faults[k + 1].start - fault.end, fault_start, k + 1)

    if sc.faults:
        sched.at(sc.faults[0].start, fault_start, 0)

    # client: one new tx per interval until the quiet period, retrying
    # anything not yet delivered
    rng = random.Random(sc.seed ^ 0x5EED)
    outstanding: dict[str, float] = {}      # tx -> time of last accepted submit (or -inf)
    delivered_tx: set[str] = set()
    delivered_numbers: list[int] = []
    counter = 0
    t = 0.0
    step = sc.client_interval
    stop_new = sc.duration - sc.quiet
    end = sc.duration
    while t < end:
        t = round(t + step, 9)
        try:
            batches = orderer.advance(t)
        except AssertionError as e:      # raised if a committed entry would be overwritten
            violations.append(f"committed entry overwritten: {e}")
            break
        for b in batches:
            delivered_numbers.append(b.number)
            for tx in b.txs:
                delivered_tx.add(tx)
                outstanding.pop(tx, None)
        if t <= stop_new:
            counter += 1
            outstanding[f"tx{counter:05d}"] = float("-inf")
        for tx, last in list(outstanding.items()):
            if t - last >= sc.retry_after:
                ack = orderer.submit(tx)
                if ack.accepted:
                    outstanding[tx] = t
                elif ack.leader_hint is not None and rng.random() < 0.5:
                    ack = orderer.submit_to(ack.leader_hint, tx)
                    if ack.accepted:
                        outstanding[tx] = t

    violations.extend(orderer.violations)
    # gap-free, duplicate-free numbering
    if delivered_numbers != list(range(1, len(delivered_numbers) + 1)):
        violations.append("delivered block numbers are not gap-free")
    # committed prefixes agree on every node
    for node in orderer.nodes:
        for i in range(1, node.state.commit_index + 1):
            if orderer.committed.get(i) != node.state.log[i - 1]:
                violations.append(f"node {node.id} committed prefix diverges at index {i}")
                break
    # liveness: after the quiet period everything submitted got through
    missing = counter - len(delivered_tx)
    if missing:
        violations.append(f"{missing} submitted txs never delivered after the quiet period")
    # at least one leader failover: a leader was hit and another node led later
    failovers = 0
    for node, term in failover_targets:
        if any(tm > term and ld != node for tm, ld in orderer.leaders_by_term.items()):
            failovers += 1
    if not failovers:
        violations.append("no leader failover happened")
    return ScenarioResult(sc, violations, delivered_numbers, failovers, counter,
                          len(delivered_tx), trace)


def run_many(seeds, cluster_sizes=(3, 5)) -> list[ScenarioResult]:
    out = []
    for k, seed in enumerate(seeds):
        size = cluster_sizes[k % len(cluster_sizes)]
        out.append(run_scenario(random_scenario(seed, size), trace_enabled=False))
    return out
