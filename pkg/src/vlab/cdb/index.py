"""Byte-offset index tables over multi-record MOL2 databases."""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from pathlib import Path

MARKER = b"@<TRIPOS>MOLECULE"
MAGIC = "CDBIDX"
VERSION = 1

_MARKER_RE = re.compile(rb"^" + re.escape(MARKER), re.MULTILINE)
_HEX64 = re.compile(r"[0-9a-f]{64}\Z")


class CdbIndexError(ValueError):
    """Malformed, empty or stale index."""


class EmptyDatabase(CdbIndexError):
    pass


class StaleIndex(CdbIndexError):
    pass


class RecordOutOfRange(LookupError):
    def __init__(self, n: int, count: int):
        self.n = n
        self.count = count
        super().__init__(f"molecule {n} out of range (database has {count} records)")


@dataclass(frozen=True)
class CdbIndex:
    name: str
    source_size: int
    source_checksum: str
    offsets: tuple[int, ...]
    lengths: tuple[int, ...]

    @property
    def record_count(self) -> int:
        return len(self.offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    def lookup(self, n: int) -> tuple[int, int]:
        """(offset, length) of molecule ``n`` (1-based)."""
        if not 1 <= n <= len(self.offsets):
            raise RecordOutOfRange(n, len(self.offsets))
        return self.offsets[n - 1], self.lengths[n - 1]


def build_index(data: bytes, name: str = "") -> CdbIndex:
    """Index every record that starts with the MOLECULE marker at a line start."""
    offsets = [m.start() for m in _MARKER_RE.finditer(data)]
    if not offsets:
        raise EmptyDatabase(f"{name or 'database'}: no {MARKER.decode()} records found")
    ends = offsets[1:] + [len(data)]
    lengths = [e - o for o, e in zip(offsets, ends)]
    return CdbIndex(name, len(data), hashlib.sha256(data).hexdigest(), tuple(offsets), tuple(lengths))


def index_file(path: str | os.PathLike, name: str | None = None) -> CdbIndex:
    path = Path(path)
    return build_index(path.read_bytes(), name if name is not None else path.stem)


def lookup(index: CdbIndex, n: int) -> tuple[int, int]:
    return index.lookup(n)


def write_index(index: CdbIndex) -> bytes:
    if index.record_count == 0:
        raise CdbIndexError("refusing to write an index with no records")
    lines = [f"{MAGIC} {VERSION} {index.record_count} {index.source_size} {index.source_checksum}"]
    lines += [f"{n} {o} {ln}" for n, (o, ln) in enumerate(zip(index.offsets, index.lengths), start=1)]
    return ("\n".join(lines) + "\n").encode("ascii")


def read_index(data: bytes, name: str = "") -> CdbIndex:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise CdbIndexError("index file is not ASCII") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CdbIndexError("empty index file")
    head = lines[0].split(" ")
    if len(head) != 5 or head[0] != MAGIC:
        raise CdbIndexError("malformed index header")
    if head[1] != str(VERSION):
        raise CdbIndexError(f"unsupported index version {head[1]}")
    if not _HEX64.match(head[4]):
        raise CdbIndexError("malformed checksum field")
    try:
        count, size = int(head[2]), int(head[3])
    except ValueError:
        raise CdbIndexError("malformed index header") from None
    rows = lines[1:]
    if len(rows) != count:
        raise CdbIndexError(f"truncated table: header declares {count} records, found {len(rows)}")
    offsets, lengths = [], []
    for expected, row in enumerate(rows, start=1):
        parts = row.split(" ")
        try:
            n, off, ln = (int(p) for p in parts)
        except ValueError:
            raise CdbIndexError(f"malformed table line {expected + 1}: {row!r}") from None
        if n != expected:
            raise CdbIndexError(f"table line {expected + 1}: expected record {expected}, got {n}")
        if off < 0 or ln <= 0 or off + ln > size:
            raise CdbIndexError(f"table line {expected + 1}: record outside the source file")
        if offsets and offsets[-1] + lengths[-1] != off:
            raise CdbIndexError(f"table line {expected + 1}: records do not tile the file")
        offsets.append(off)
        lengths.append(ln)
    if offsets and offsets[-1] + lengths[-1] != size:
        raise CdbIndexError("last record does not end at end of file")
    return CdbIndex(name, size, head[4], tuple(offsets), tuple(lengths))


def file_checksum(path: str | os.PathLike) -> tuple[int, str]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
            size += len(chunk)
    return size, h.hexdigest()


def check_fresh(index: CdbIndex, db_path: str | os.PathLike) -> None:
    """Raise :class:`StaleIndex` if the database no longer matches its index."""
    size, digest = file_checksum(db_path)
    if size != index.source_size or digest != index.source_checksum:
        raise StaleIndex(f"{db_path}: index is stale (database size or checksum changed)")


def load_index(index_path: str | os.PathLike, db_path: str | os.PathLike, name: str = "") -> CdbIndex:
    index = read_index(Path(index_path).read_bytes(), name)
    check_fresh(index, db_path)
    return index
