"""The access service: endorse, order, commit, and answer queries.

``AccessService`` runs in one of two modes:

* realtime: a driver thread advances the orderer with the monotonic clock
  and commits batches as they are cut; client calls block until their
  transaction is committed.
* manual: no thread; virtual time only moves while a caller waits for a
  result.  Deterministic, and what most tests use.
"""

from __future__ import annotations

import fcntl
import json
import os
import threading
import time
import uuid
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from ..codec import canonical_bytes, loads_exact
from ..errors import (AbacError, AlreadyInitialized, ConfigInvalid, EndorsementMismatch,
                      NotInitialized, SchemaViolation, TransactionInvalid, Unauthorized,
                      Unavailable)
from ..ledger import Block, DecisionRecord, Ledger, Transaction, TxType
from ..ledger.store import MemoryBlockStore
from ..ordering import RaftOrderer, make_orderer
from ..policy import format_datetime, parse_datetime, parse_policy
from ..state import LogBackend, MemoryBackend, StateKey, StateStore, ValidationCode
from . import crypto
from .committer import CommitResult, Committer
from .config import NodeConfig
from .handlers import handler_for, record_kind, sign_policy

CONFIG_FILE = "config.json"
KEYS_DIR = "keys"


def _exact(document: Any) -> Any:
    """JSON value with exact decimals, whatever form it arrived in."""
    if isinstance(document, (str, bytes)):
        try:
            return loads_exact(document)
        except ValueError as e:
            raise SchemaViolation(f"invalid JSON document: {e}") from None
    return loads_exact(json.dumps(document))


def _check_id(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value or ":" in value or "/" in value:
        raise SchemaViolation(f"{name} must be a non-empty string without ':' or '/'")
    return value


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def read_private_keys(data_dir) -> dict[str, str]:
    keys = {}
    kdir = Path(data_dir) / KEYS_DIR
    if kdir.is_dir():
        for path in sorted(kdir.glob("*.key")):
            keys[path.stem] = path.read_text().strip()
    return keys


class AccessService:
    def __init__(self, config: NodeConfig, ledger: Ledger, state: StateStore,
                 signers: dict[str, str], realtime: bool = True,
                 submit_timeout: float = 10.0, retry_after: float = 2.0,
                 commit_timeout: float = 30.0):
        missing = set(config.endorsers) - set(signers)
        if missing:
            raise ConfigInvalid(f"no signing key for endorsers {sorted(missing)}")
        for org in config.endorsers:
            if crypto.public_from_private(signers[org]) != config.org_keys[org]:
                raise ConfigInvalid(f"signing key for {org} does not match its registered key")
        if ledger.tip < 0:
            raise NotInitialized("ledger has no genesis block; run bootstrap first")
        self.config = config
        self.ledger = ledger
        self.state = state
        self.signers = dict(signers)
        self.committer = Committer(ledger, state, config)
        self.committer.recover()
        self.realtime = realtime
        self.submit_timeout = submit_timeout
        self.retry_after = retry_after
        # seconds (virtual in manual mode) a transaction may take to commit
        self.commit_timeout = commit_timeout
        self.orderer = make_orderer(config.orderer, seed=config.seed, start_number=ledger.tip + 1)
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._waiters: dict[bytes, list[Future]] = {}
        self._listeners: list[Callable[[CommitResult], None]] = []
        self._closed = False
        self._failure: BaseException | None = None
        self._lockfile = None
        self._t0 = time.monotonic()
        self._vnow = 0.0
        self._driver = None
        if realtime:
            self._driver = threading.Thread(target=self._drive_forever, name="commit-driver",
                                            daemon=True)
            self._driver.start()
        elif isinstance(self.orderer, RaftOrderer):
            self.orderer.run_until_leader()
            self._vnow = self.orderer.now

    # -- construction

    @staticmethod
    def bootstrap(raw_config: dict[str, Any]) -> NodeConfig:
        """Create a data directory with keys, config and the genesis block."""
        raw = dict(raw_config)
        if "data_dir" not in raw:
            raise ConfigInvalid("data_dir is required")
        data_dir = Path(raw["data_dir"])
        if data_dir.exists() and any(data_dir.iterdir()):
            raise AlreadyInitialized(f"{data_dir} is not empty")
        orgs = list(raw.get("endorsement", {}).get("organizations", ["org1", "org2", "org3"]))
        keys = dict(raw.get("org_keys", {}))
        private = {}
        for org in orgs + [o for o in raw.get("endorsers", []) if o not in orgs]:
            if org not in keys:
                private[org], keys[org] = crypto.generate_keypair()
        raw["org_keys"] = keys
        config = NodeConfig.from_dict(raw)
        if config.orderer.mode == "Kafka":
            raise ConfigInvalid("Kafka ordering is not implemented; use Solo or Raft")
        data_dir.mkdir(parents=True, exist_ok=True)
        kdir = data_dir / KEYS_DIR
        kdir.mkdir()
        for org, priv in private.items():
            path = kdir / f"{org}.key"
            path.write_text(priv + "\n")
            os.chmod(path, 0o600)
        config.save(data_dir / CONFIG_FILE)
        ledger = Ledger.open(data_dir / "ledger", config.blocks_per_file, config.fsync)
        state = StateStore(LogBackend(data_dir / "state.log", config.fsync))
        try:
            ledger.append_block(Block.genesis())
            state.apply_validated(0, [], [])
        finally:
            ledger.close()
            state.close()
        return config

    @classmethod
    def open(cls, data_dir, realtime: bool = True, **kwargs) -> "AccessService":
        data_dir = Path(data_dir)
        if not (data_dir / CONFIG_FILE).exists():
            raise NotInitialized(f"{data_dir} has no {CONFIG_FILE}; run bootstrap first")
        lockfile = open(data_dir / ".lock", "w")
        try:
            fcntl.flock(lockfile, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            lockfile.close()
            raise Unavailable(f"{data_dir} is in use by a running node; talk to it over its socket") from None
        try:
            config = NodeConfig.load(data_dir / CONFIG_FILE)
            ledger = Ledger.open(data_dir / "ledger", config.blocks_per_file, config.fsync)
            state = StateStore(LogBackend(data_dir / "state.log", config.fsync))
            svc = cls(config, ledger, state, read_private_keys(data_dir), realtime=realtime, **kwargs)
        except BaseException:
            lockfile.close()
            raise
        svc._lockfile = lockfile
        return svc

    @classmethod
    def in_memory(cls, config: NodeConfig, signers: dict[str, str], realtime: bool = False,
                  **kwargs) -> "AccessService":
        ledger = Ledger(MemoryBlockStore())
        state = StateStore(MemoryBackend())
        ledger.append_block(Block.genesis())
        state.apply_validated(0, [], [])
        return cls(config, ledger, state, signers, realtime=realtime, **kwargs)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        if self._driver is not None:
            self._driver.join(timeout=5)
        for futs in self._waiters.values():
            for f in futs:
                if not f.done():
                    f.set_exception(Unavailable("service closed"))
        self.ledger.close()
        self.state.close()
        if self._lockfile is not None:
            self._lockfile.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- time and the commit loop

    def _now(self) -> float:
        return time.monotonic() - self._t0 if self.realtime else self._vnow

    def add_listener(self, fn: Callable[[CommitResult], None]) -> None:
        """Called from the committing thread for every committed transaction."""
        self._listeners.append(fn)

    def _commit_batches(self, batches) -> None:
        for batch in batches:
            _, results = self.committer.commit(batch.txs)
            for r in results:
                for fn in self._listeners:
                    fn(r)
                if r.code is ValidationCode.DUPLICATE_TXID:
                    # a resubmission: answer its waiters with the original outcome
                    first = self.ledger.find_tx(r.tx_id)
                    if first is None or first == (r.height, r.index):
                        continue
                    code = self.ledger.get_block(first[0]).validity[first[1]]
                    r = CommitResult(r.tx_id, code, *first)
                with self._lock:
                    futs = self._waiters.pop(r.tx_id, [])
                for f in futs:
                    if not f.done():
                        f.set_result(r)

    def _drive_forever(self) -> None:
        try:
            while True:
                with self._cond:
                    if self._closed:
                        return
                    wake = self.orderer.next_wakeup()
                    delay = 0.05 if wake is None else wake - self._now()
                    if delay > 0:
                        self._cond.wait(min(delay, 0.05))
                    if self._closed:
                        return
                    batches = self.orderer.advance(self._now())
                self._commit_batches(batches)
        except BaseException as e:     # storage failures and the like: fail every waiter
            self._failure = e
            with self._lock:
                waiters, self._waiters = self._waiters, {}
            for futs in waiters.values():
                for f in futs:
                    if not f.done():
                        f.set_exception(Unavailable(f"commit loop stopped: {e}"))

    def _step_manual(self, until: float) -> None:
        with self._lock:
            wake = self.orderer.next_wakeup()
            self._vnow = min(until, wake) if wake is not None else until
            batches = self.orderer.advance(self._vnow)
        self._commit_batches(batches)

    # -- ordering with retries

    def _submit_once(self, tx: Transaction) -> bool:
        with self._cond:
            if self._failure is not None:
                raise Unavailable(f"commit loop stopped: {self._failure}")
            ack = self.orderer.submit(tx, now=self._now())
            self._cond.notify_all()
        return ack.accepted

    def _submit_until_accepted(self, tx: Transaction) -> None:
        deadline = self._now() + self.submit_timeout
        while not self._submit_once(tx):
            if self._now() >= deadline:
                raise Unavailable("no ordering leader available")
            if self.realtime:
                time.sleep(0.01)
            else:
                self._step_manual(self._vnow + 0.01)

    def submit(self, tx: Transaction) -> Future:
        """Hand an endorsed transaction to ordering; the future yields its CommitResult."""
        fut: Future = Future()
        with self._lock:
            self._waiters.setdefault(tx.tx_id, []).append(fut)
        try:
            self._submit_until_accepted(tx)
        except AbacError:
            with self._lock:
                self._waiters.pop(tx.tx_id, None)
            raise
        return fut

    def wait(self, tx: Transaction, fut: Future) -> CommitResult:
        """Block until ``tx`` commits, resubmitting if an accepted copy got lost."""
        start = self._now()
        last = start
        while True:
            if self.realtime:
                try:
                    return fut.result(timeout=self.retry_after)
                except FutureTimeout:
                    pass
            else:
                while not fut.done() and self._vnow < last + self.retry_after:
                    self._step_manual(last + self.retry_after)
                if fut.done():
                    return fut.result()
            if self._now() - start > self.commit_timeout:
                raise Unavailable("transaction was not committed in time")
            # resubmitting is safe: duplicates are rejected at commit by tx_id
            self._submit_until_accepted(tx)
            last = self._now()

    def _committed_at(self, tx_id: bytes) -> tuple[int, int] | None:
        # the ledger is appended just before state applies the block; wait for both
        where = self.ledger.find_tx(tx_id)
        if where is None or where[0] > self.state.height:
            return None
        return where

    def settle(self, tx_ids_hex, timeout: float | None = None) -> None:
        """Wait until every listed transaction has a committed position."""
        remaining = {bytes.fromhex(t) for t in tx_ids_hex}
        deadline = self._now() + (timeout if timeout is not None else self.commit_timeout)
        while True:
            remaining = {t for t in remaining if self._committed_at(t) is None}
            if not remaining:
                return
            if self._now() > deadline:
                raise Unavailable(f"{len(remaining)} transactions still uncommitted")
            if self.realtime:
                time.sleep(0.01)
            else:
                self._step_manual(self._vnow + 0.05)

    def drive(self, seconds: float) -> None:
        """Manual mode: advance virtual time (cuts and commits pending batches)."""
        target = self._vnow + seconds
        while self._vnow < target:
            self._step_manual(target)

    # -- endorsement

    def endorse(self, tx_type: TxType, payload: dict[str, Any], client_id: str,
                timestamp: datetime | None = None) -> tuple[Transaction, dict[str, Any]]:
        """Simulate on every endorser against one snapshot and sign the result."""
        payload_bytes = canonical_bytes(payload)
        handler = handler_for(tx_type.value, self.config.org_keys, self.config.endorsement)
        sims = []
        with self.state.snapshot() as snap:
            for _org in self.config.endorsers:
                sims.append(self.state.simulate(
                    lambda view: handler(view, loads_exact(payload_bytes)), _snapshot=snap))
        first = sims[0]
        first_rw, first_result = first.rwset.to_bytes(), canonical_bytes(first.result)
        for sim in sims[1:]:
            if sim.rwset.to_bytes() != first_rw or canonical_bytes(sim.result) != first_result:
                raise EndorsementMismatch("endorsers produced different read/write sets")
        tx = Transaction(tx_type, payload_bytes, first.rwset, timestamp or _utcnow(), client_id)
        signing = tx.signing_bytes()
        approvals = [(org, crypto.sign(self.signers[org], signing)) for org in self.config.endorsers]
        return tx.with_approvals(approvals), first.result

    def _run(self, tx_type: TxType, payload: dict[str, Any], client_id: str,
             wait: bool) -> tuple[Transaction, dict[str, Any], CommitResult | None]:
        tx, result = self.endorse(tx_type, payload, client_id)
        fut = self.submit(tx)
        if not wait:
            return tx, result, None
        return tx, result, self.wait(tx, fut)

    @staticmethod
    def _outcome(tx: Transaction, commit: CommitResult | None) -> dict[str, Any]:
        if commit is None:
            return {"tx_id": tx.tx_id.hex(), "status": "Pending"}
        return commit.to_dict()

    # -- operations

    def record_attributes(self, document: Any, kind: str, client_id: str = "client",
                          wait: bool = True) -> dict[str, Any]:
        record_kind(kind)
        payload = {"kind": kind, "record": _exact(document)}
        tx, result, commit = self._run(TxType.RECORD_ATTRIBUTES, payload, client_id, wait)
        return {**self._outcome(tx, commit), "key": result["key"], "action": result["action"]}

    def approve_policy(self, document: Any, orgs) -> list[dict[str, str]]:
        """Approvals signed with the keys this node holds (convenience for tests and the CLI)."""
        policy = parse_policy(_exact(document))
        return [sign_policy(policy, org, self.signers[org]) for org in orgs]

    def propose_policy(self, document: Any, approvals: list[dict[str, str]],
                       proposal_id: str | None = None, client_id: str = "client",
                       wait: bool = True) -> dict[str, Any]:
        policy_doc = _exact(document)
        policy = parse_policy(policy_doc)
        exists = self.state.get(StateKey("policy", policy.policy_id)) is not None
        tx_type = TxType.POLICY_UPDATE if exists else TxType.POLICY_SUBMIT
        payload = {"proposal_id": proposal_id or uuid.uuid4().hex, "policy": policy_doc,
                   "approvals": [dict(a) for a in approvals]}
        tx, result, commit = self._run(tx_type, payload, client_id, wait)
        return {**self._outcome(tx, commit), "policy_id": result["policy_id"],
                "digest": result["digest"], "approved_by": result["approved_by"],
                "tx_type": tx_type.value}

    def _decision_payload(self, subject_id, object_id, request_id, action, clock,
                          client_id) -> dict[str, Any]:
        _check_id(subject_id, "subject_id")
        _check_id(object_id, "object_id")
        if clock is not None:
            if not self.config.allow_clock_override:
                raise Unauthorized("clock override is disabled on this node")
            stamped = parse_datetime(clock) if isinstance(clock, str) else clock
        else:
            stamped = _utcnow().replace(microsecond=0)
        return {"request_id": request_id or uuid.uuid4().hex, "subject_id": subject_id,
                "object_id": object_id, "action": action, "clock": format_datetime(stamped),
                "nonce": uuid.uuid4().hex, "client_id": client_id}

    def check_access(self, subject_id: str, object_id: str, request_id: str | None = None,
                     action: str = "access", clock: datetime | str | None = None,
                     client_id: str = "client", max_attempts: int = 5) -> dict[str, Any]:
        """Decide, commit the decision record, and return it.

        Only a committed Valid record is returned; if ordering is down the
        call raises Unavailable and no decision is given.
        """
        payload = self._decision_payload(subject_id, object_id, request_id, action, clock,
                                         client_id)
        for _ in range(max_attempts):
            tx, result, commit = self._run(TxType.POLICY_DECISION, payload, client_id, True)
            if commit.valid:
                return {**result["decision"], "request_id": payload["request_id"],
                        "clock": payload["clock"], "record": result["record"],
                        **commit.to_dict()}
            if commit.code is not ValidationCode.MVCC_READ_CONFLICT:
                raise TransactionInvalid(tx.tx_id, commit.code.label())
            # attributes changed underneath us: decide again on fresh state
            payload = {**payload, "nonce": uuid.uuid4().hex}
        raise TransactionInvalid(tx.tx_id, "gave up after repeated read conflicts")

    def check_access_async(self, subject_id: str, object_id: str, request_id: str | None = None,
                           clock=None, client_id: str = "client") -> tuple[Transaction, Future]:
        """Endorse and submit without waiting (used by the benchmark driver)."""
        payload = self._decision_payload(subject_id, object_id, request_id, "access", clock,
                                         client_id)
        tx, _ = self.endorse(TxType.POLICY_DECISION, payload, client_id)
        return tx, self.submit(tx)

    def record_attributes_async(self, document: Any, kind: str,
                                client_id: str = "client") -> tuple[Transaction, Future]:
        record_kind(kind)
        payload = {"kind": kind, "record": _exact(document)}
        tx, _ = self.endorse(TxType.RECORD_ATTRIBUTES, payload, client_id)
        return tx, self.submit(tx)

    def query(self, namespace: str, ident: str) -> dict[str, Any] | None:
        """Read committed state directly; no transaction is ordered."""
        try:
            key = StateKey(namespace, ident)
        except ValueError as e:
            raise SchemaViolation(str(e)) from None
        entry = self.state.get(key)
        if entry is None:
            return None
        value, version = entry
        return {"key": str(key), "value": json.loads(value), "version": version.to_list()}

    def get_record(self, kind: str, ident: str) -> dict[str, Any] | None:
        found = self.query(record_kind(kind).namespace, ident)
        return found["value"] if found else None

    def query_audit(self, object_id: str, caller: str) -> list[dict[str, Any]]:
        if caller not in self.config.audit_roles:
            raise Unauthorized(f"{caller!r} may not read the audit trail")
        _check_id(object_id, "object_id")
        out = []
        for height, index, tx in self.ledger.query_history_for_key(f"decision:{object_id}"):
            if tx.tx_type is not TxType.POLICY_DECISION:
                continue
            for key, value in tx.rwset.writes:
                if key.namespace == "decision" and value is not None:
                    record = DecisionRecord.from_bytes(value).to_dict()
                    out.append({**record, "height": height, "tx_index": index,
                                "tx_id": tx.tx_id.hex()})
        return out

    def policy_history(self, policy_id: str) -> list[dict[str, Any]]:
        """Every committed version of a policy, oldest first, with its approvals."""
        _check_id(policy_id, "policy_id")
        out = []
        for height, index, tx in self.ledger.query_history_for_key(f"policy:{policy_id}"):
            payload = tx.payload_json()
            out.append({"height": height, "tx_index": index, "tx_id": tx.tx_id.hex(),
                        "tx_type": tx.tx_type.value, "proposal_id": payload["proposal_id"],
                        "approvals": payload["approvals"],
                        "policy": json.loads(canonical_bytes(payload["policy"]))})
        return out

    def history(self, prefix: str) -> list[dict[str, Any]]:
        out = []
        for height, index, tx in self.ledger.query_history_for_key(prefix):
            writes = {str(k): (json.loads(v) if v is not None else None)
                      for k, v in tx.rwset.writes}
            out.append({"height": height, "tx_index": index, "tx_id": tx.tx_id.hex(),
                        "tx_type": tx.tx_type.value, "writes": writes})
        return out

    def tx_status(self, tx_id_hex: str) -> dict[str, Any]:
        try:
            tx_id = bytes.fromhex(tx_id_hex)
        except ValueError:
            raise SchemaViolation("tx_id must be hex") from None
        where = self._committed_at(tx_id)
        if where is None:
            with self._lock:
                pending = tx_id in self._waiters
            return {"tx_id": tx_id_hex, "status": "Pending" if pending else "Unknown"}
        height, index = where
        code = self.ledger.get_block(height).validity[index]
        return CommitResult(tx_id, code, height, index).to_dict()

    def verify(self) -> dict[str, Any]:
        return {**self.ledger.verify_chain().to_dict(), "height": self.ledger.tip}

    def export_state(self) -> list[dict[str, Any]]:
        return list(self.state.export())
