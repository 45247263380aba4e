"""Wire protocol shared by the CDB server and client.

Requests are CRLF-terminated ASCII lines; ``GET`` answers carry a length
prefix followed by the raw record bytes::

    GET aldrich_300.db 5\\r\\n   ->  OK 1532\\r\\n<1532 bytes>
    STAT aldrich_300.db\\r\\n    ->  OK 2000\\r\\n
    PING\\r\\n                   ->  OK 0\\r\\n
"""

from __future__ import annotations

import re

CRLF = b"\r\n"
MAX_LINE = 1024
NAME_RE = re.compile(r"[A-Za-z0-9_.-]+\Z")


class CdbError(Exception):
    """Base class for client-visible CDB failures."""


class CdbConnectError(CdbError):
    """The server could not be reached (refused, unreachable, timed out)."""


class FramingError(CdbError):
    """The byte stream did not follow the protocol (short read, bad header)."""


class ProtocolError(CdbError):
    """The server answered with ``ERR``."""

    code = ""

    def __init__(self, detail: str = ""):
        self.detail = detail
        super().__init__(f"ERR {self.code} {detail}".strip())


class NoDatabase(ProtocolError):
    code = "NODB"


class NoRecord(ProtocolError):
    code = "NOREC"


class BadRequest(ProtocolError):
    code = "BADREQ"


ERRORS = {cls.code: cls for cls in (NoDatabase, NoRecord, BadRequest)}


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    try:
        number = int(port)
    except ValueError:
        raise ValueError(f"bad port in endpoint {text!r}") from None
    if not 0 <= number <= 65535:
        raise ValueError(f"bad port in endpoint {text!r}")
    return host, number
