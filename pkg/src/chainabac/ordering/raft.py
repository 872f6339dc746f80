"""Simplified Raft for the ordering cluster.

Log entries carry whole transaction batches.  A new leader appends an
empty batch (no-op) so entries from earlier terms can commit; no-ops are
never delivered as blocks.  There is no snapshotting and no membership
change.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .config import OrdererConfig
from .cutter import BlockCutter
from .sim import Scheduler, SimNetwork, Trace


class Role(str, Enum):
    FOLLOWER = "Follower"
    CANDIDATE = "Candidate"
    LEADER = "Leader"


@dataclass(frozen=True)
class LogEntry:
    term: int
    batch: tuple  # empty tuple marks a leader no-op


@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate: int
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True)
class VoteReply:
    term: int
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: int
    prev_index: int
    prev_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True)
class AppendReply:
    term: int
    success: bool
    match_index: int


MAX_ENTRIES_PER_APPEND = 64


@dataclass
class RaftNodeState:
    role: Role = Role.FOLLOWER
    current_term: int = 0
    voted_for: int | None = None
    log: list[LogEntry] = field(default_factory=list)   # index i lives at log[i - 1]
    commit_index: int = 0

    @property
    def last_index(self) -> int:
        return len(self.log)

    def term_at(self, index: int) -> int:
        return self.log[index - 1].term if index > 0 else 0


class RaftNode:
    def __init__(self, node_id: int, peers: list[int], config: OrdererConfig,
                 scheduler: Scheduler, network: SimNetwork, rng: random.Random,
                 trace: Trace | None = None,
                 on_commit: Callable[[int, int, LogEntry], None] | None = None,
                 on_leader: Callable[[int, int], None] | None = None):
        self.id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.config = config
        self.sched = scheduler
        self.net = network
        self.rng = rng
        self.trace = trace or Trace(enabled=False)
        self.on_commit = on_commit
        self.on_leader = on_leader
        self.state = RaftNodeState()
        self.alive = True
        self.leader_hint: int | None = None
        self._votes: set[int] = set()
        self._next: dict[int, int] = {}
        self._match: dict[int, int] = {}
        self._election_gen = 0
        self._heartbeat_gen = 0
        self._cut_gen = 0
        self.cutter: BlockCutter = BlockCutter(config.batch_max_count, config.batch_timeout)
        network.register(node_id, self.receive)

    # -- helpers

    @property
    def role(self) -> Role:
        return self.state.role

    @property
    def majority(self) -> int:
        return (len(self.peers) + 1) // 2 + 1

    def _log(self, event: str, **detail) -> None:
        self.trace.record(self.sched.now, self.id, event, term=self.state.current_term, **detail)

    def start(self) -> None:
        if not self.peers:
            self.run_election()
        else:
            self._reset_election_timer()

    def _reset_election_timer(self) -> None:
        self._election_gen += 1
        gen = self._election_gen
        lo, hi = self.config.election_timeout_range
        self.sched.after(self.rng.uniform(lo, hi), self._election_timeout, gen)

    def _election_timeout(self, gen: int) -> None:
        if self.alive and gen == self._election_gen and self.role is not Role.LEADER:
            self.run_election()

    def _step_down(self, term: int) -> None:
        was_leader = self.role is Role.LEADER
        if term > self.state.current_term:
            self.state.current_term = term
            self.state.voted_for = None
        self.state.role = Role.FOLLOWER
        if was_leader:
            lost = self.cutter.clear()
            self._log("stepped_down", dropped_pending=len(lost))
            # the leader's election timer is not running; a follower's keeps
            # its deadline so a stale candidate cannot starve it
            self._reset_election_timer()

    # -- election

    def run_election(self) -> None:
        s = self.state
        s.current_term += 1
        s.role = Role.CANDIDATE
        s.voted_for = self.id
        self._votes = {self.id}
        self.leader_hint = None
        self._log("election_started")
        self._reset_election_timer()
        if len(self._votes) >= self.majority:
            self._become_leader()
            return
        msg = RequestVote(s.current_term, self.id, s.last_index, s.term_at(s.last_index))
        for p in self.peers:
            self.net.send(self.id, p, msg)

    def _on_request_vote(self, src: int, m: RequestVote) -> None:
        s = self.state
        if m.term > s.current_term:
            self._step_down(m.term)
        up_to_date = (m.last_log_term, m.last_log_index) >= (s.term_at(s.last_index), s.last_index)
        granted = (m.term == s.current_term and s.voted_for in (None, m.candidate) and up_to_date)
        if granted:
            s.voted_for = m.candidate
            self._reset_election_timer()
        self.net.send(self.id, src, VoteReply(s.current_term, granted))

    def _on_vote_reply(self, src: int, m: VoteReply) -> None:
        s = self.state
        if m.term > s.current_term:
            self._step_down(m.term)
            return
        if s.role is not Role.CANDIDATE or m.term != s.current_term or not m.granted:
            return
        self._votes.add(src)
        if len(self._votes) >= self.majority:
            self._become_leader()

    def _become_leader(self) -> None:
        s = self.state
        s.role = Role.LEADER
        self.leader_hint = self.id
        self._next = {p: s.last_index + 1 for p in self.peers}
        self._match = {p: 0 for p in self.peers}
        self._log("became_leader")
        if self.on_leader:
            self.on_leader(self.id, s.current_term)
        s.log.append(LogEntry(s.current_term, ()))
        self._advance_commit()
        self.replicate()
        self._heartbeat_gen += 1
        self.sched.after(self.config.heartbeat_interval, self._heartbeat, self._heartbeat_gen)

    # -- replication

    def _heartbeat(self, gen: int) -> None:
        if not self.alive or gen != self._heartbeat_gen or self.role is not Role.LEADER:
            return
        self.replicate()
        self.sched.after(self.config.heartbeat_interval, self._heartbeat, gen)

    def replicate(self) -> None:
        """Send append-entries (or a heartbeat) to every follower."""
        s = self.state
        for p in self.peers:
            nxt = self._next[p]
            entries = tuple(s.log[nxt - 1:nxt - 1 + MAX_ENTRIES_PER_APPEND])
            self.net.send(self.id, p, AppendEntries(s.current_term, self.id, nxt - 1,
                                                     s.term_at(nxt - 1), entries, s.commit_index))

    def _on_append(self, src: int, m: AppendEntries) -> None:
        s = self.state
        if m.term < s.current_term:
            self.net.send(self.id, src, AppendReply(s.current_term, False, 0))
            return
        if m.term > s.current_term or s.role is not Role.FOLLOWER:
            self._step_down(m.term)
        self.leader_hint = m.leader
        self._reset_election_timer()
        if m.prev_index > s.last_index or s.term_at(m.prev_index) != m.prev_term:
            hint = min(s.last_index, m.prev_index - 1)
            self.net.send(self.id, src, AppendReply(s.current_term, False, max(hint, 0)))
            return
        for k, entry in enumerate(m.entries):
            idx = m.prev_index + 1 + k
            if idx <= s.last_index:
                if s.term_at(idx) == entry.term:
                    continue
                if idx <= s.commit_index:
                    raise AssertionError("leader tried to overwrite a committed entry")
                del s.log[idx - 1:]
            s.log.append(entry)
        last_new = m.prev_index + len(m.entries)
        if m.leader_commit > s.commit_index:
            self._set_commit(min(m.leader_commit, last_new))
        self.net.send(self.id, src, AppendReply(s.current_term, True, last_new))

    def _on_append_reply(self, src: int, m: AppendReply) -> None:
        s = self.state
        if m.term > s.current_term:
            self._step_down(m.term)
            return
        if s.role is not Role.LEADER or m.term != s.current_term:
            return
        if m.success:
            self._match[src] = max(self._match[src], m.match_index)
            self._next[src] = self._match[src] + 1
            self._advance_commit()
            if self._next[src] <= s.last_index:
                self._send_one(src)
        else:
            self._next[src] = max(1, min(self._next[src] - 1, m.match_index + 1))
            self._send_one(src)

    def _send_one(self, p: int) -> None:
        s = self.state
        nxt = self._next[p]
        entries = tuple(s.log[nxt - 1:nxt - 1 + MAX_ENTRIES_PER_APPEND])
        self.net.send(self.id, p, AppendEntries(s.current_term, self.id, nxt - 1,
                                                 s.term_at(nxt - 1), entries, s.commit_index))

    def _advance_commit(self) -> None:
        s = self.state
        for n in range(s.last_index, s.commit_index, -1):
            if s.term_at(n) != s.current_term:
                break
            replicas = 1 + sum(1 for p in self.peers if self._match.get(p, 0) >= n)
            if replicas >= self.majority:
                self._set_commit(n)
                break

    def _set_commit(self, index: int) -> None:
        s = self.state
        for i in range(s.commit_index + 1, index + 1):
            if self.on_commit:
                self.on_commit(self.id, i, s.log[i - 1])
        if index > s.commit_index:
            s.commit_index = index
            self._log("commit", index=index)

    # -- client side (leader only)

    def accept(self, tx) -> bool:
        if not self.alive or self.role is not Role.LEADER:
            return False
        for batch in self.cutter.add(tx, self.sched.now):
            self._append_batch(batch)
        dl = self.cutter.deadline()
        if dl is not None and len(self.cutter.pending) == 1:
            self._cut_gen += 1
            self.sched.at(dl, self._cut_timeout, self._cut_gen)
        return True

    def _cut_timeout(self, gen: int) -> None:
        if not self.alive or gen != self._cut_gen or self.role is not Role.LEADER:
            return
        batch = self.cutter.poll(self.sched.now)
        if batch:
            self._append_batch(batch)

    def _append_batch(self, batch: list) -> None:
        s = self.state
        s.log.append(LogEntry(s.current_term, tuple(batch)))
        self._log("appended", index=s.last_index, size=len(batch))
        self._advance_commit()
        self.replicate()

    # -- message dispatch and faults

    def receive(self, src: int, msg: Any) -> None:
        if not self.alive:
            return
        if isinstance(msg, AppendEntries):
            self._on_append(src, msg)
        elif isinstance(msg, AppendReply):
            self._on_append_reply(src, msg)
        elif isinstance(msg, RequestVote):
            self._on_request_vote(src, msg)
        elif isinstance(msg, VoteReply):
            self._on_vote_reply(src, msg)

    def crash(self) -> None:
        """Lose volatile state; term, vote and log survive as if on disk."""
        self.alive = False
        self._election_gen += 1
        self._heartbeat_gen += 1
        self._cut_gen += 1
        self.cutter.clear()
        self.state.role = Role.FOLLOWER
        self.state.commit_index = 0
        self.leader_hint = None
        self._log("crashed")

    def restart(self) -> None:
        self.alive = True
        self._log("restarted")
        self._reset_election_timer()
