"""Threaded CDB molecule server.

Each connection gets its own handler thread; records are read with
``os.pread`` against a shared descriptor, so lookups never scan the file and
concurrent handlers do not contend on a file position.
"""

from __future__ import annotations

import logging
import os
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .index import CdbIndex, load_index
from .protocol import CRLF, MAX_LINE, NAME_RE, parse_endpoint

log = logging.getLogger(__name__)


@dataclass
class ServedDatabase:
    name: str
    path: Path
    index: CdbIndex
    fd: int

    def read(self, n: int) -> bytes:
        offset, length = self.index.lookup(n)
        data = os.pread(self.fd, length, offset)
        if len(data) != length:
            raise OSError(f"{self.path}: short read for record {n}")
        return data


def read_server_config(text: str, base: Path | None = None) -> dict[str, tuple[Path, Path]]:
    """Parse ``<database-name> <db-path> [<index-path>]`` lines.

    Relative paths resolve against ``base``; the index path defaults to the
    database path with ``.idx`` appended.
    """
    base = base or Path.cwd()
    config = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3) or not NAME_RE.match(parts[0]):
            raise ValueError(f"line {lineno}: expected '<name> <db-path> [<index-path>]'")
        db = base / parts[1]
        idx = base / parts[2] if len(parts) == 3 else db.with_name(db.name + ".idx")
        if parts[0] in config:
            raise ValueError(f"line {lineno}: database {parts[0]!r} configured twice")
        config[parts[0]] = (db, idx)
    return config


class _Handler(socketserver.StreamRequestHandler):
    server: "CdbServer"

    def handle(self) -> None:
        while True:
            try:
                line = self.rfile.readline(MAX_LINE + 1)
            except OSError:
                return
            if not line:
                return
            if not line.endswith(CRLF) or len(line) > MAX_LINE:
                # framing is broken; the stream cannot be resynchronised
                log.debug("dropping connection on malformed request framing")
                return
            try:
                reply = self.server.answer(line[:-2])
                self.wfile.write(reply)
                self.wfile.flush()
            except OSError:
                return


class CdbServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128

    def __init__(self, address: tuple[str, int], databases: dict[str, tuple[Path, Path]], delay: float = 0.0):
        """Load and freshness-check every index before binding.

        ``delay`` holds every response back by that many seconds, to stand in
        for a distant replica.
        """
        self.delay = delay
        self.databases: dict[str, ServedDatabase] = {}
        try:
            for name, (db_path, idx_path) in databases.items():
                index = load_index(idx_path, db_path, name)
                fd = os.open(db_path, os.O_RDONLY)
                self.databases[name] = ServedDatabase(name, Path(db_path), index, fd)
            super().__init__(address, _Handler)
        except BaseException:
            self._close_files()
            raise
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def answer(self, request: bytes) -> bytes:
        if self.delay:
            time.sleep(self.delay)
        try:
            parts = request.decode("ascii").split(" ")
        except UnicodeDecodeError:
            return b"ERR BADREQ" + CRLF
        verb, args = parts[0], parts[1:]
        if verb == "PING" and not args:
            return b"OK 0" + CRLF
        if verb not in ("GET", "STAT") or not args or not NAME_RE.match(args[0]):
            return b"ERR BADREQ" + CRLF
        name = args[0]
        if verb == "STAT":
            if len(args) != 1:
                return b"ERR BADREQ" + CRLF
            db = self.databases.get(name)
            if db is None:
                return f"ERR NODB {name}".encode() + CRLF
            return f"OK {db.index.record_count}".encode() + CRLF
        if len(args) != 2 or not args[1].isdigit():
            return b"ERR BADREQ" + CRLF
        db = self.databases.get(name)
        if db is None:
            return f"ERR NODB {name}".encode() + CRLF
        n = int(args[1])
        if not 1 <= n <= db.index.record_count:
            return f"ERR NOREC {n}".encode() + CRLF
        data = db.read(n)
        return f"OK {len(data)}".encode() + CRLF + data

    def start(self) -> "CdbServer":
        """Serve from a background thread (for embedding and tests)."""
        # short poll so stop() returns promptly
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,), name="cdb-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def server_close(self) -> None:
        super().server_close()
        self._close_files()

    def _close_files(self) -> None:
        for db in self.databases.values():
            try:
                os.close(db.fd)
            except OSError:
                pass
        self.databases = {}

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(bind: str, databases: dict[str, tuple[Path, Path]], delay: float = 0.0) -> CdbServer:
    """Create a server bound to ``host:port`` (port 0 picks a free one). Not yet started."""
    return CdbServer(parse_endpoint(bind), databases, delay=delay)
