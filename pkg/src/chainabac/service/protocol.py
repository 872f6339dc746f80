"""Line-delimited JSON protocol over a local (Unix) socket.

Each request is one JSON object on one line::

    {"op": "check_access", "request_id": "r1", "subject_id": "s001", ...}

and gets exactly one response line::

    {"request_id": "r1", "status": "ok", "result": {...}}
    {"request_id": "r1", "status": "error", "error": {"code": "...", "message": "..."}}
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import threading
from typing import Any

from ..errors import AbacError, BadRequest
from .gateway import AccessService

log = logging.getLogger(__name__)

MAX_LINE = 16 * 1024 * 1024


def _need(req: dict[str, Any], name: str) -> Any:
    if name not in req:
        raise BadRequest(f"missing field {name!r}")
    return req[name]


def _check_access(svc, req):
    return svc.check_access(_need(req, "subject_id"), _need(req, "object_id"),
                            request_id=req.get("request_id"), action=req.get("action", "access"),
                            clock=req.get("clock"), client_id=req.get("client_id", "client"))


def _record_attributes(svc, req):
    return svc.record_attributes(_need(req, "record"), _need(req, "kind"),
                                 client_id=req.get("client_id", "client"))


def _propose_policy(svc, req):
    return svc.propose_policy(_need(req, "policy"), _need(req, "approvals"),
                              proposal_id=req.get("proposal_id"),
                              client_id=req.get("client_id", "client"))


OPS = {
    "check_access": _check_access,
    "record_attributes": _record_attributes,
    "propose_policy": _propose_policy,
    "query_audit": lambda svc, req: svc.query_audit(_need(req, "object_id"),
                                                    req.get("caller", req.get("client_id", ""))),
    "query": lambda svc, req: svc.query(_need(req, "namespace"), _need(req, "id")),
    "policy_history": lambda svc, req: svc.policy_history(_need(req, "policy_id")),
    "history": lambda svc, req: svc.history(_need(req, "prefix")),
    "tx_status": lambda svc, req: svc.tx_status(_need(req, "tx_id")),
    "verify": lambda svc, req: svc.verify(),
    "export_state": lambda svc, req: svc.export_state(),
    "ping": lambda svc, req: {"height": svc.ledger.tip},
}


def dispatch(svc: AccessService, req: Any) -> dict[str, Any]:
    request_id = req.get("request_id") if isinstance(req, dict) else None
    try:
        if not isinstance(req, dict):
            raise BadRequest("request must be a JSON object")
        op = req.get("op")
        if op not in OPS:
            raise BadRequest(f"unknown op {op!r}")
        result = OPS[op](svc, req)
        return {"request_id": request_id, "status": "ok", "result": result}
    except AbacError as e:
        return {"request_id": request_id, "status": "error", "error": e.to_dict()}
    except Exception as e:       # never let one bad request kill the connection
        log.exception("request failed")
        return {"request_id": request_id, "status": "error",
                "error": {"code": "INTERNAL", "message": str(e)}}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        svc = self.server.service
        while True:
            line = self.rfile.readline(MAX_LINE)
            if not line:
                return
            if not line.strip():
                continue
            try:
                req = json.loads(line)
            except ValueError as e:
                resp = {"request_id": None, "status": "error",
                        "error": {"code": BadRequest.code, "message": f"invalid JSON: {e}"}}
            else:
                resp = dispatch(svc, req)
            self.wfile.write(json.dumps(resp, sort_keys=True).encode() + b"\n")
            self.wfile.flush()


class SocketServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True

    def __init__(self, path: str, service: AccessService):
        if os.path.exists(path):
            os.unlink(path)
        super().__init__(path, _Handler)
        self.service = service
        self.path = path

    def serve_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="socket-server", daemon=True)
        t.start()
        return t

    def server_close(self):
        super().server_close()
        if os.path.exists(self.path):
            os.unlink(self.path)


class RemoteError(AbacError):
    """An error reported by the node; ``code`` is the node's error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class Client:
    def __init__(self, path: str, timeout: float = 60.0):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.settimeout(timeout)
        self.sock.connect(path)
        self._file = self.sock.makefile("rwb")
        self._counter = 0

    def call(self, op: str, **fields) -> Any:
        self._counter += 1
        req = {"op": op, **fields}
        req.setdefault("request_id", f"c{self._counter}")
        self._file.write(json.dumps(req).encode() + b"\n")
        self._file.flush()
        line = self._file.readline(MAX_LINE)
        if not line:
            raise RemoteError("UNAVAILABLE", "connection closed by node")
        resp = json.loads(line)
        if resp.get("status") != "ok":
            err = resp.get("error", {})
            raise RemoteError(err.get("code", "ERROR"), err.get("message", ""))
        return resp["result"]

    def close(self) -> None:
        self._file.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
