"""Client side of the CDB protocol."""

from __future__ import annotations

import os
import socket
import time
from pathlib import Path

from .index import MARKER
from .protocol import (
    CRLF,
    ERRORS,
    MAX_LINE,
    CdbConnectError,
    FramingError,
    ProtocolError,
    parse_endpoint,
)

DEFAULT_TIMEOUT = 10.0


class CdbClient:
    """One connection to a CDB server, reused for sequential requests."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.host, self.port = parse_endpoint(endpoint)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._rfile = None

    def connect(self) -> None:
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise CdbConnectError(f"cannot reach {self.endpoint}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def close(self) -> None:
        if self._rfile is not None:
            self._rfile.close()
        if self._sock is not None:
            self._sock.close()
        self._sock = self._rfile = None

    def __enter__(self) -> "CdbClient":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request(self, line: str) -> bytes:
        """Send one request and return the payload after ``OK``."""
        self.connect()
        try:
            self._sock.sendall(line.encode("ascii") + CRLF)
            header = self._rfile.readline(MAX_LINE + 1)
        except socket.timeout as exc:
            self.close()
            raise CdbConnectError(f"{self.endpoint}: timed out") from exc
        except OSError as exc:
            self.close()
            raise FramingError(f"{self.endpoint}: connection failed mid-request: {exc}") from exc
        if not header.endswith(CRLF):
            self.close()
            raise FramingError(f"{self.endpoint}: connection closed before a complete response header")
        text = header[:-2].decode("ascii", "replace")
        kind, _, rest = text.partition(" ")
        if kind == "ERR":
            code, _, detail = rest.partition(" ")
            raise ERRORS.get(code, ProtocolError)(detail)
        if kind != "OK" or not rest.isdigit():
            self.close()
            raise FramingError(f"{self.endpoint}: bad response header {text!r}")
        return rest.encode()

    def get(self, database: str, n: int) -> bytes:
        length = int(self._request(f"GET {database} {n}"))
        try:
            data = self._rfile.read(length)
        except OSError as exc:
            self.close()
            raise FramingError(f"{self.endpoint}: {exc}") from exc
        if len(data) != length:
            self.close()
            raise FramingError(f"{self.endpoint}: short read ({len(data)} of {length} bytes)")
        return data

    def stat(self, database: str) -> int:
        return int(self._request(f"STAT {database}"))

    def ping(self) -> float:
        self.connect()
        start = time.perf_counter()
        self._request("PING")
        return time.perf_counter() - start


def fetch(endpoint: str, database: str, n: int, timeout: float = DEFAULT_TIMEOUT) -> bytes:
    """Fetch molecule ``n``; the bytes begin with the MOL2 MOLECULE marker."""
    with CdbClient(endpoint, timeout) as client:
        data = client.get(database, n)
    if not data.startswith(MARKER):
        raise FramingError(f"record {n} of {database} does not start with {MARKER.decode()}")
    return data


def fetch_to_file(endpoint: str, database: str, n: int, directory: str | os.PathLike = ".", timeout: float = DEFAULT_TIMEOUT) -> Path:
    """Fetch molecule ``n`` into ``<directory>/<n>.mol2``; nothing is written on error."""
    data = fetch(endpoint, database, n, timeout)
    path = Path(directory) / f"{n}.mol2"
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def stat(endpoint: str, database: str, timeout: float = DEFAULT_TIMEOUT) -> int:
    with CdbClient(endpoint, timeout) as client:
        return client.stat(database)


def ping(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> float:
    """Round-trip seconds of one ``PING`` on an established connection."""
    with CdbClient(endpoint, timeout) as client:
        return client.ping()
