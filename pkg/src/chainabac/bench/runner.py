"""Open-loop benchmark driver.

A single pacing thread releases request ``i`` at ``start + i / rate`` and
hands it to worker ``i % clients``.  Latency runs from that scheduled
release time to commit confirmation (or to the response, for read-only
queries).  Measuring from the schedule rather than from when a worker got
around to it means a backlog shows up as latency instead of vanishing.
"""

from __future__ import annotations

import csv
import math
import os
import queue
import resource
import statistics
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..errors import AbacError
from ..ordering import OrdererConfig
from ..service import AccessService, NodeConfig
from ..service.crypto import generate_keypair
from .workload import Request, WorkloadSpec, generate_fixture, request_sequence

ORGS = ("org1", "org2", "org3")


@dataclass
class RunReport:
    spec: dict[str, Any]
    achieved_throughput_tps: float
    latency_avg: float
    latency_min: float
    latency_max: float
    latency_p95: float
    valid: int
    invalid: int
    error: int
    wall_time: float
    blocks: int
    resources: dict[str, Any] = field(default_factory=dict)
    latencies: list[float] = field(default_factory=list, repr=False)

    @property
    def total(self) -> int:
        return self.valid + self.invalid + self.error

    def to_dict(self, with_latencies: bool = False) -> dict[str, Any]:
        d = asdict(self)
        if not with_latencies:
            d.pop("latencies")
        return d

    def table(self) -> str:
        rows = [
            ("tx type", self.spec["tx_type"]),
            ("send rate (tps)", self.spec["send_rate_tps"]),
            ("clients", self.spec["clients"]),
            ("orderer", self.spec["orderer_mode"]),
            ("transactions", self.spec["total_txs"]),
            ("valid / invalid / error", f"{self.valid} / {self.invalid} / {self.error}"),
            ("throughput (tps)", f"{self.achieved_throughput_tps:.1f}"),
            ("latency avg (s)", f"{self.latency_avg:.4f}"),
            ("latency min (s)", f"{self.latency_min:.4f}"),
            ("latency max (s)", f"{self.latency_max:.4f}"),
            ("latency p95 (s)", f"{self.latency_p95:.4f}"),
            ("wall time (s)", f"{self.wall_time:.2f}"),
            ("blocks", self.blocks),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def percentile(values: list[float], pct: float) -> float:
    """Nearest-rank percentile."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100 * len(ordered)))
    return ordered[rank - 1]


def _rss_mb() -> float | None:
    try:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmRSS:"):
                    return int(line.split()[1]) / 1024
    except OSError:
        pass
    return None


def start_service(spec: WorkloadSpec, data_dir: str | None) -> AccessService:
    """A fresh realtime node for one run (cold start)."""
    keys = {org: generate_keypair() for org in ORGS}
    if spec.orderer_mode == "Raft":
        orderer = OrdererConfig(mode="Raft", cluster_size=spec.raft_cluster_size,
                                batch_max_count=spec.batch_max_count,
                                batch_timeout=spec.batch_timeout)
    else:
        orderer = OrdererConfig(batch_max_count=spec.batch_max_count,
                                batch_timeout=spec.batch_timeout)
    raw = {"data_dir": data_dir or "memory", "orderer": orderer.to_dict(),
           "endorsement": {"organizations": list(ORGS), "threshold": 2},
           "org_keys": {org: pub for org, (_, pub) in keys.items()},
           "allow_clock_override": True, "fsync": False, "seed": spec.seed}
    signers = {org: priv for org, (priv, _) in keys.items()}
    if data_dir is None:
        return AccessService.in_memory(NodeConfig.from_dict(raw), signers, realtime=True)
    cfg = AccessService.bootstrap(raw)
    keydir = Path(cfg.data_dir) / "keys"
    for org, priv in signers.items():
        (keydir / f"{org}.key").write_text(priv + "\n")
    return AccessService.open(cfg.data_dir, realtime=True)


class _Recorder:
    """Collects commit confirmations from the service's committing thread."""

    def __init__(self):
        self.lock = threading.Lock()
        self.commit_time: dict[bytes, float] = {}
        self.commit_valid: dict[bytes, bool] = {}
        self.done = threading.Condition(self.lock)

    def on_commit(self, result) -> None:
        now = time.monotonic()
        with self.lock:
            if result.tx_id not in self.commit_time:
                self.commit_time[result.tx_id] = now
                self.commit_valid[result.tx_id] = result.valid
            self.done.notify_all()


def run(spec: WorkloadSpec, service: AccessService | None = None) -> RunReport:
    """Run one workload against a cold-started node (or ``service`` if given)."""
    tmp = None
    own = service is None
    if own:
        if spec.storage == "disk":
            tmp = tempfile.TemporaryDirectory(prefix="chainabac-bench-")
            service = start_service(spec, os.path.join(tmp.name, "node"))
        else:
            service = start_service(spec, None)
    try:
        fx = generate_fixture(service, spec.n_subjects, spec.n_objects, spec.n_policies, spec.seed)
        requests = request_sequence(spec, fx)
        return _drive(service, spec, requests)
    finally:
        if own:
            service.close()
            if tmp is not None:
                tmp.cleanup()


def _drive(svc: AccessService, spec: WorkloadSpec, requests: list[Request]) -> RunReport:
    rec = _Recorder()
    svc.add_listener(rec.on_commit)
    height0 = svc.ledger.tip
    scheduled: dict[int, float] = {}
    tx_of: dict[int, bytes] = {}
    answered: dict[int, float] = {}     # read-only queries: response time
    errors: set[int] = set()
    state_lock = threading.Lock()
    queues = [queue.Queue() for _ in range(spec.clients)]

    def worker(q: queue.Queue) -> None:
        while True:
            item = q.get()
            if item is None:
                return
            req, t_sched = item
            try:
                if req.kind == "PolicyDecision":
                    tx, _ = svc.check_access_async(client_id=f"client{req.index % spec.clients}",
                                                   **req.args)
                    with state_lock:
                        tx_of[req.index] = tx.tx_id
                elif req.kind == "RecordAttributes":
                    tx, _ = svc.record_attributes_async(req.args["document"], req.args["kind"],
                                                        client_id=f"client{req.index % spec.clients}")
                    with state_lock:
                        tx_of[req.index] = tx.tx_id
                else:
                    svc.query(req.args["namespace"], req.args["id"])
                    with state_lock:
                        answered[req.index] = time.monotonic()
            except AbacError:
                with state_lock:
                    errors.add(req.index)

    threads = [threading.Thread(target=worker, args=(q,), daemon=True) for q in queues]
    for t in threads:
        t.start()
    cpu0 = resource.getrusage(resource.RUSAGE_SELF)
    start = time.monotonic() + 0.05
    interval = 1.0 / spec.send_rate_tps
    for req in requests:
        t_sched = start + req.index * interval
        delay = t_sched - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        scheduled[req.index] = t_sched
        queues[req.index % spec.clients].put((req, t_sched))
    for q in queues:
        q.put(None)
    for t in threads:
        t.join()
    # drain: wait for every submitted transaction to be confirmed
    deadline = time.monotonic() + spec.drain_timeout
    with rec.lock:
        while time.monotonic() < deadline:
            missing = [i for i, tx in tx_of.items() if tx not in rec.commit_time]
            if not missing:
                break
            rec.done.wait(0.1)
        commit_time = dict(rec.commit_time)
        commit_valid = dict(rec.commit_valid)
    cpu1 = resource.getrusage(resource.RUSAGE_SELF)

    latencies, ends = [], []
    valid = invalid = 0
    error = len(errors)
    for i in range(len(requests)):
        if i in errors:
            continue
        if i in answered:
            end = answered[i]
            valid += 1
        elif i in tx_of and tx_of[i] in commit_time:
            end = commit_time[tx_of[i]]
            if commit_valid[tx_of[i]]:
                valid += 1
            else:
                invalid += 1
        else:
            error += 1          # never confirmed within the drain timeout
            continue
        latencies.append(end - scheduled[i])
        ends.append(end)
    # n requests occupy n send slots, so the window includes the first slot
    span = (max(ends) - start + interval) if ends else 0.0
    throughput = valid / span if span > 0 else 0.0
    return RunReport(
        spec=spec.to_dict(),
        achieved_throughput_tps=throughput,
        latency_avg=statistics.fmean(latencies) if latencies else 0.0,
        latency_min=min(latencies, default=0.0),
        latency_max=max(latencies, default=0.0),
        latency_p95=percentile(latencies, 95),
        valid=valid, invalid=invalid, error=error,
        wall_time=time.monotonic() - start,
        blocks=svc.ledger.tip - height0,
        resources={"cpu_seconds": round((cpu1.ru_utime + cpu1.ru_stime)
                                        - (cpu0.ru_utime + cpu0.ru_stime), 3),
                   "rss_mb": _rss_mb()},
        latencies=latencies,
    )


SWEEP_COLUMNS = ("value", "send_rate_tps", "clients", "total_txs", "throughput", "avg_latency",
                 "p95", "max_latency", "valid", "invalid", "error")


def sweep_rows(param: str, values, reports: list[RunReport]) -> list[dict[str, Any]]:
    rows = []
    for value, r in zip(values, reports):
        rows.append({"value": value, "send_rate_tps": r.spec["send_rate_tps"],
                     "clients": r.spec["clients"], "total_txs": r.spec["total_txs"],
                     "throughput": round(r.achieved_throughput_tps, 3),
                     "avg_latency": round(r.latency_avg, 5), "p95": round(r.latency_p95, 5),
                     "max_latency": round(r.latency_max, 5),
                     "valid": r.valid, "invalid": r.invalid, "error": r.error})
    return rows


def write_csv(rows: list[dict[str, Any]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def sweep(param: str, values, base: WorkloadSpec, progress=None) -> list[RunReport]:
    """One cold-started run per value."""
    reports = []
    for value in values:
        spec = base.with_value(param, value)
        report = run(spec)
        reports.append(report)
        if progress:
            progress(value, report)
    return reports


@dataclass
class SaturationAnalysis:
    knee_index: int | None          # first point where throughput stops tracking the send rate
    latency_nondecreasing_after_knee: bool
    throughput_plateaus: bool
    detail: str

    @property
    def holds(self) -> bool:
        return (self.knee_index is not None and self.latency_nondecreasing_after_knee
                and self.throughput_plateaus)


def analyse_saturation(rates: list[float], throughput: list[float], latency: list[float],
                       tracking: float = 0.9, plateau: float = 0.15,
                       latency_slack: float = 0.0) -> SaturationAnalysis:
    """Check the saturation shape of an ascending send-rate sweep.

    The knee is the first rate whose throughput falls below ``tracking``
    times the rate.  Past it, average latency must not decrease (within
    ``latency_slack`` seconds) and throughput must stay within ``plateau``
    (relative) of the throughput at the knee.
    """
    knee = next((i for i, (r, t) in enumerate(zip(rates, throughput)) if t < tracking * r), None)
    if knee is None:
        return SaturationAnalysis(None, True, False, "throughput tracked the send rate everywhere")
    lat = latency[knee:]
    nondecreasing = all(b >= a - latency_slack for a, b in zip(lat, lat[1:]))
    # the plateau level is the throughput at the knee; later points stay near it
    level = throughput[knee]
    flat = all(abs(t - level) <= plateau * level for t in throughput[knee:])
    detail = (f"knee at rate {rates[knee]}: throughput {[round(t, 1) for t in throughput[knee:]]}, "
              f"latency {[round(x, 3) for x in lat]}")
    return SaturationAnalysis(knee, nondecreasing, flat, detail)
