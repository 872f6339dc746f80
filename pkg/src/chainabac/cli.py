"""Command-line entry point.

Every command prints exactly one JSON document on stdout; diagnostics go
to stderr.  Exit status: 0 success (a Deny is a successful decision), 1
domain error, 2 usage error.

Commands talk to a running node over its socket when one is reachable
(``--socket``, ``$CHAINABAC_SOCKET``, or the data directory's default
socket); otherwise they open the data directory in-process.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Any

from . import __version__
from .errors import AbacError, BadRequest
from .service.config import DEFAULT_SOCKET_ENV, NodeConfig
from .service.gateway import CONFIG_FILE, KEYS_DIR, AccessService
from .service.protocol import Client, RemoteError, SocketServer, dispatch

DATA_DIR_ENV = "CHAINABAC_DATA_DIR"

log = logging.getLogger("chainabac")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    sys.stdout.flush()


def _read_json(path: str) -> Any:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
    except OSError as e:
        raise BadRequest(f"cannot read {path}: {e}") from None
    try:
        return json.loads(text)
    except ValueError as e:
        raise BadRequest(f"{path} is not valid JSON: {e}") from None


# -- node connections

class _LocalNode:
    """The in-process equivalent of a socket client."""

    def __init__(self, data_dir: str):
        self.svc = AccessService.open(data_dir, realtime=False)

    def call(self, op: str, **fields) -> Any:
        resp = dispatch(self.svc, {"op": op, **fields})
        if resp["status"] != "ok":
            raise RemoteError(resp["error"]["code"], resp["error"]["message"])
        return resp["result"]

    def close(self) -> None:
        self.svc.close()


def _socket_path(args) -> tuple[str | None, bool]:
    """(path, explicit): explicit paths must work; the default one may be absent."""
    if args.socket:
        return args.socket, True
    if os.environ.get(DEFAULT_SOCKET_ENV):
        return os.environ[DEFAULT_SOCKET_ENV], True
    cfg_path = Path(args.data_dir) / CONFIG_FILE
    if cfg_path.exists():
        try:
            return NodeConfig.load(cfg_path).socket, False
        except AbacError:
            pass
    return None, False


def _connect(args):
    path, explicit = _socket_path(args)
    if path and (explicit or os.path.exists(path)):
        try:
            return Client(path)
        except OSError as e:
            if explicit:
                raise RemoteError("UNAVAILABLE", f"cannot reach node at {path}: {e}") from None
            log.info("socket %s not answering; opening data directory directly", path)
    return _LocalNode(args.data_dir)


def _with_node(args, op: str, **fields) -> Any:
    node = _connect(args)
    try:
        return node.call(op, **fields)
    finally:
        node.close()


# -- commands

def cmd_bootstrap(args) -> int:
    raw = _read_json(args.config)
    if not isinstance(raw, dict):
        raise BadRequest("config must be a JSON object")
    raw.setdefault("data_dir", args.data_dir)
    cfg = AccessService.bootstrap(raw)
    from .ledger import Ledger
    ledger = Ledger.open(Path(cfg.data_dir) / "ledger", cfg.blocks_per_file, cfg.fsync)
    try:
        status = ledger.verify_chain().to_dict()
    finally:
        ledger.close()
    _emit({"status": "Initialized", "data_dir": cfg.data_dir, "height": 0,
           "chain": status, "organizations": list(cfg.endorsement.organizations),
           "orderer": cfg.orderer.mode, "socket": cfg.socket})
    return 0


def cmd_serve(args) -> int:
    svc = AccessService.open(args.data_dir, realtime=True)
    path = args.socket or os.environ.get(DEFAULT_SOCKET_ENV) or svc.config.socket
    server = SocketServer(path, svc)
    stop = threading.Event()

    def _stop(*_):
        stop.set()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    server.serve_in_background()
    log.warning("serving %s on %s (height %d)", args.data_dir, path, svc.ledger.tip)
    try:
        while not stop.wait(0.5):
            pass
    finally:
        server.shutdown()
        server.server_close()
        height = svc.ledger.tip
        svc.close()
    _emit({"status": "stopped", "socket": path, "height": height})
    return 0


def cmd_submit_attributes(args) -> int:
    out = _with_node(args, "record_attributes", kind=args.kind, record=_read_json(args.file),
                     client_id=args.client)
    _emit(out)
    return 0 if out.get("status") == "Valid" else 1


def _local_approvals(args, policy_doc) -> list[dict[str, str]]:
    from .policy import parse_policy
    from .service.handlers import sign_policy
    approvals = []
    for org in args.approve or []:
        key_path = Path(args.keys_dir or Path(args.data_dir) / KEYS_DIR) / f"{org}.key"
        try:
            private = key_path.read_text().strip()
        except OSError as e:
            raise BadRequest(f"no key for {org}: {e}") from None
        approvals.append(sign_policy(parse_policy(policy_doc), org, private))
    return approvals


def cmd_submit_policy(args) -> int:
    policy = _read_json(args.file)
    approvals = list(_read_json(args.approvals)) if args.approvals else []
    approvals += _local_approvals(args, policy)
    fields = {"policy": policy, "approvals": approvals, "client_id": args.client}
    if args.proposal_id:
        fields["proposal_id"] = args.proposal_id
    out = _with_node(args, "propose_policy", **fields)
    _emit(out)
    return 0 if out.get("status") == "Valid" else 1


def cmd_approve(args) -> int:
    from .policy import parse_policy
    from .service.handlers import sign_policy
    key_path = Path(args.key_file) if args.key_file else Path(args.data_dir) / KEYS_DIR / f"{args.org}.key"
    try:
        private = key_path.read_text().strip()
    except OSError as e:
        raise BadRequest(f"cannot read key {key_path}: {e}") from None
    _emit(sign_policy(parse_policy(_read_json(args.file)), args.org, private))
    return 0


def cmd_check(args) -> int:
    fields = {"subject_id": args.subject, "object_id": args.object, "action": args.action,
              "client_id": args.client}
    if args.clock:
        fields["clock"] = args.clock
    if args.request_id:
        fields["request_id"] = args.request_id
    _emit(_with_node(args, "check_access", **fields))
    return 0


def cmd_audit(args) -> int:
    records = _with_node(args, "query_audit", object_id=args.object, caller=args.caller)
    _emit({"object_id": args.object, "count": len(records), "records": records})
    return 0


def cmd_verify(args) -> int:
    path, explicit = _socket_path(args)
    if path and (explicit or os.path.exists(path)):
        status = _with_node(args, "verify")
    else:
        # read the files directly so a damaged store can still be diagnosed
        from .ledger import Ledger
        if not (Path(args.data_dir) / CONFIG_FILE).exists():
            raise RemoteError("NOT_INITIALIZED", f"{args.data_dir} is not a bootstrapped data directory")
        cfg = NodeConfig.load(Path(args.data_dir) / CONFIG_FILE)
        ledger = Ledger.open(Path(args.data_dir) / "ledger", cfg.blocks_per_file, fsync=False)
        try:
            status = {**ledger.verify_chain().to_dict(), "height": ledger.tip}
        finally:
            ledger.close()
    _emit(status)
    return 0 if status.get("status") == "Intact" else 1


def cmd_history(args) -> int:
    entries = _with_node(args, "history", prefix=args.prefix)
    _emit({"prefix": args.prefix, "count": len(entries), "entries": entries})
    return 0


def cmd_policy_history(args) -> int:
    versions = _with_node(args, "policy_history", policy_id=args.policy_id)
    _emit({"policy_id": args.policy_id, "count": len(versions), "versions": versions})
    return 0


def cmd_state_export(args) -> int:
    entries = _with_node(args, "export_state")
    _emit({"count": len(entries), "entries": entries})
    return 0


def cmd_state_get(args) -> int:
    found = _with_node(args, "query", namespace=args.namespace, id=args.id)
    _emit(found if found is not None else {"key": f"{args.namespace}:{args.id}", "value": None})
    return 0 if found is not None else 1


def cmd_status(args) -> int:
    _emit(_with_node(args, "tx_status", tx_id=args.tx_id))
    return 0


def _bench_spec(args):
    from .bench import WorkloadSpec
    base = _read_json(args.spec) if args.spec else {}
    overrides = {"tx_type": args.tx_type, "total_txs": args.total_txs,
                 "send_rate_tps": args.rate, "clients": args.clients,
                 "orderer_mode": args.orderer, "seed": args.seed}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return WorkloadSpec.from_dict(base)


def cmd_bench_run(args) -> int:
    from .bench import run
    from .bench.plots import plot_run
    spec = _bench_spec(args)
    report = run(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    figures = plot_run(report, out)
    sys.stderr.write(report.table() + "\n")
    _emit({**report.to_dict(), "report": str(out / "report.json"),
           "figures": [str(p) for p in figures]})
    return 0


def cmd_bench_sweep(args) -> int:
    from .bench import analyse_saturation, sweep
    from .bench.plots import plot_sweep
    from .bench.runner import sweep_rows, write_csv
    spec = _bench_spec(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise BadRequest("--values must be a comma-separated list of integers") from None
    if not values:
        raise BadRequest("--values is empty")

    def progress(value, report):
        sys.stderr.write(f"{args.param}={value}: {report.achieved_throughput_tps:.1f} tps, "
                         f"avg latency {report.latency_avg:.3f} s\n")

    reports = sweep(args.param, values, spec, progress)
    rows = sweep_rows(args.param, values, reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "sweep.csv")
    (out / "sweep.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    figures = plot_sweep(rows, args.param, out)
    result = {"param": args.param, "rows": rows, "csv": str(out / "sweep.csv"),
              "figures": [str(p) for p in figures]}
    if args.param == "send_rate":
        a = analyse_saturation([r["value"] for r in rows], [r["throughput"] for r in rows],
                               [r["avg_latency"] for r in rows])
        result["saturation"] = {"knee_value": rows[a.knee_index]["value"] if a.knee_index is not None else None,
                                "latency_nondecreasing_after_knee": a.latency_nondecreasing_after_knee,
                                "throughput_plateaus": a.throughput_plateaus, "detail": a.detail}
    _emit(result)
    return 0


# -- parser

def _add_bench_overrides(p) -> None:
    p.add_argument("--spec", help="workload spec JSON file")
    p.add_argument("--tx-type", choices=["RecordAttributes", "PolicyDecision", "QueryData"])
    p.add_argument("--total-txs", type=int)
    p.add_argument("--rate", type=int, help="send rate in transactions per second")
    p.add_argument("--clients", type=int)
    p.add_argument("--orderer", choices=["Solo", "Raft"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="bench-out", help="directory for report files and figures")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chainabac", description="Ledger-backed attribute-based access control node.")
    p.add_argument("--version", action="version", version=f"chainabac {__version__}")
    p.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV, "chainabac-data"),
                   help=f"node data directory (default ${DATA_DIR_ENV} or ./chainabac-data)")
    p.add_argument("--socket", help=f"node socket (default ${DEFAULT_SOCKET_ENV}, then the data dir's)")
    p.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bootstrap", help="create a data directory with genesis block")
    b.add_argument("config", help="bootstrap config JSON ('-' for stdin)")
    b.set_defaults(fn=cmd_bootstrap)

    s = sub.add_parser("serve", help="run the node and listen on its socket")
    s.set_defaults(fn=cmd_serve)

    sm = sub.add_parser("submit", help="record attributes or propose a policy")
    smsub = sm.add_subparsers(dest="what", required=True)
    a = smsub.add_parser("attributes", help="record a subject or resource attribute document")
    a.add_argument("file")
    a.add_argument("--kind", choices=["subject", "resource"], required=True)
    a.add_argument("--client", default="cli")
    a.set_defaults(fn=cmd_submit_attributes)
    pol = smsub.add_parser("policy", help="propose a new policy or a policy change")
    pol.add_argument("file")
    pol.add_argument("--approve", action="append", metavar="ORG",
                     help="sign as ORG with its key from the keys directory (repeatable)")
    pol.add_argument("--approvals", help="JSON file with a list of collected approvals")
    pol.add_argument("--keys-dir", help="directory holding <org>.key files")
    pol.add_argument("--proposal-id")
    pol.add_argument("--client", default="cli")
    pol.set_defaults(fn=cmd_submit_policy)

    ap = sub.add_parser("approve", help="sign a policy document as one organization")
    ap.add_argument("file")
    ap.add_argument("--org", required=True)
    ap.add_argument("--key-file")
    ap.set_defaults(fn=cmd_approve)

    c = sub.add_parser("check", help="request an access decision")
    c.add_argument("--subject", required=True)
    c.add_argument("--object", required=True)
    c.add_argument("--clock", help="evaluation time override (UTC ISO-8601; test mode only)")
    c.add_argument("--action", default="access")
    c.add_argument("--request-id")
    c.add_argument("--client", default="cli")
    c.set_defaults(fn=cmd_check)

    au = sub.add_parser("audit", help="decision history of one resource")
    au.add_argument("object")
    au.add_argument("--as", dest="caller", default="auditor", help="audit role to act as")
    au.set_defaults(fn=cmd_audit)

    v = sub.add_parser("verify", help="check the hash chain")
    v.set_defaults(fn=cmd_verify)

    lg = sub.add_parser("ledger", help="ledger inspection")
    lgsub = lg.add_subparsers(dest="what", required=True)
    lv = lgsub.add_parser("verify", help="check the hash chain")
    lv.set_defaults(fn=cmd_verify)
    lh = lgsub.add_parser("history", help="valid writes to a key or key prefix")
    lh.add_argument("prefix", help="e.g. subject:s001, decision:r001, policy:policy01")
    lh.set_defaults(fn=cmd_history)

    ph = sub.add_parser("policy", help="policy inspection")
    phsub = ph.add_subparsers(dest="what", required=True)
    phh = phsub.add_parser("history", help="every committed version of a policy")
    phh.add_argument("policy_id")
    phh.set_defaults(fn=cmd_policy_history)

    st = sub.add_parser("state", help="world state inspection")
    stsub = st.add_subparsers(dest="what", required=True)
    se = stsub.add_parser("export", help="dump every committed key")
    se.set_defaults(fn=cmd_state_export)
    sg = stsub.add_parser("get", help="read one key")
    sg.add_argument("namespace", choices=["subject", "resource", "policy", "decision"])
    sg.add_argument("id")
    sg.set_defaults(fn=cmd_state_get)

    tx = sub.add_parser("status", help="commit status of a transaction")
    tx.add_argument("tx_id")
    tx.set_defaults(fn=cmd_status)

    be = sub.add_parser("bench", help="benchmark workloads")
    besub = be.add_subparsers(dest="what", required=True)
    br = besub.add_parser("run", help="run one workload")
    _add_bench_overrides(br)
    br.set_defaults(fn=cmd_bench_run)
    bs = besub.add_parser("sweep", help="run a workload once per parameter value")
    bs.add_argument("--param", choices=["send_rate", "clients", "total_txs"], required=True)
    bs.add_argument("--values", required=True, help="comma-separated list, e.g. 50,100,200")
    _add_bench_overrides(bs)
    bs.set_defaults(fn=cmd_bench_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _emit({"error": {"code": "USAGE", "message": str(e)}})
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except BadRequest as e:
        _emit({"error": e.to_dict()})
        return 2
    except AbacError as e:
        _emit({"error": e.to_dict()})
        return 2 if e.code == BadRequest.code else 1


if __name__ == "__main__":
    sys.exit(main())
