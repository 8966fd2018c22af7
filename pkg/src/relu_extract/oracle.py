"""Black-box query access to a target network, locally or over TCP.

Wire protocol (newline-delimited JSON over TCP):

    server -> {"hello": 1, "input_dim": m, "output_dim": n}
    client -> {"x": [...]}
    server -> {"y": [...]}   or   {"error": "..."}
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .network import Network, forward

logger = logging.getLogger(__name__)


class BudgetExhausted(RuntimeError):
    """Raised when a query would exceed the budget.  ``partial`` is filled in by callers up the stack."""

    def __init__(self, max_queries: int, partial=None):
        super().__init__(f"query budget of {max_queries} exhausted")
        self.max_queries = max_queries
        self.partial = partial


class OracleIOError(IOError):
    pass


class ProtocolError(OracleIOError):
    pass


@dataclass(frozen=True)
class QueryBudget:
    max_queries: int | None = None


class Oracle:
    """Counts every evaluation of the wrapped function; thread safe."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], input_dim: int, output_dim: int,
                 budget: QueryBudget | None = None):
        self._fn = fn
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.budget = budget or QueryBudget()
        self._count = 0
        self._lock = threading.Lock()

    @classmethod
    def from_network(cls, net: Network, budget: QueryBudget | None = None) -> "Oracle":
        return cls(lambda x: forward(net, x), net.n_in, net.n_out, budget)

    @property
    def query_count(self) -> int:
        return self._count

    def query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"query has shape {x.shape}, expected ({self.input_dim},)")
        with self._lock:
            cap = self.budget.max_queries
            if cap is not None and self._count >= cap:
                raise BudgetExhausted(cap)
            self._count += 1
        return np.asarray(self._fn(x), dtype=np.float64).reshape(self.output_dim)

    __call__ = query

    def close(self) -> None:
        pass


# -- TCP transport ---------------------------------------------------------

def _parse_address(addr: str) -> tuple[str, int]:
    if addr.startswith("tcp://"):
        addr = addr[len("tcp://"):]
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        net: Network = self.server.net
        self._send({"hello": 1, "input_dim": net.n_in, "output_dim": net.n_out})
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                x = np.asarray(msg["x"], dtype=np.float64)
                if x.shape != (net.n_in,):
                    raise ValueError(f"expected {net.n_in} inputs, got shape {x.shape}")
                reply = {"y": forward(net, x).tolist()}
            except Exception as exc:  # the connection must survive bad requests
                reply = {"error": f"{type(exc).__name__}: {exc}"}
            self._send(reply)

    def _send(self, obj) -> None:
        self.wfile.write((json.dumps(obj) + "\n").encode())
        self.wfile.flush()


class OracleServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, net: Network, address: tuple[str, int]):
        self.net = net
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


def serve(net: Network, endpoint: str = "127.0.0.1:0", background: bool = False) -> OracleServer:
    """Start a query server.  Port 0 picks a free port; see ``server.endpoint``."""
    server = OracleServer(net, _parse_address(endpoint))
    logger.info("serving %r on %s", net, server.endpoint)
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        server.serve_forever()
    return server


class RemoteOracle(Oracle):
    def __init__(self, endpoint: str, budget: QueryBudget | None = None, timeout: float = 30.0):
        try:
            self._sock = socket.create_connection(_parse_address(endpoint), timeout=timeout)
        except OSError as exc:
            raise OracleIOError(f"cannot connect to {endpoint}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._file = self._sock.makefile("rwb")
        self._io_lock = threading.Lock()
        hello = self._read()
        if hello.get("hello") != 1:
            raise ProtocolError(f"unexpected handshake {hello!r}")
        super().__init__(self._remote_eval, int(hello["input_dim"]), int(hello["output_dim"]), budget)

    def _read(self) -> dict:
        line = self._file.readline()
        if not line:
            raise OracleIOError("connection closed by server")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed message {line[:80]!r}") from exc

    def request(self, payload: dict) -> dict:
        with self._io_lock:
            try:
                self._file.write((json.dumps(payload) + "\n").encode())
                self._file.flush()
            except OSError as exc:
                raise OracleIOError(str(exc)) from exc
            return self._read()

    def _remote_eval(self, x: np.ndarray) -> np.ndarray:
        reply = self.request({"x": x.tolist()})
        if "error" in reply:
            raise ProtocolError(reply["error"])
        return np.asarray(reply["y"], dtype=np.float64)

    def close(self) -> None:
        self._file.close()
        self._sock.close()


def connect(endpoint: str, budget: QueryBudget | None = None) -> RemoteOracle:
    return RemoteOracle(endpoint, budget)
