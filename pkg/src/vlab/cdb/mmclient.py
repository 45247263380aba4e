"""Molecule fetch client with the ``mmclient <server> <port> <db> <n>`` argv.

Writes ``<n>.mol2`` into the working directory. Exit status 0 on success,
2 on any connection or protocol error.
"""

from __future__ import annotations

import sys

from .client import fetch_to_file
from .protocol import CdbError


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 4 or not args[3].isdigit():
        print("usage: mmclient <server> <port> <database> <molecule-number>", file=sys.stderr)
        return 1
    server, port, database, n = args
    try:
        fetch_to_file(f"{server}:{port}", database, int(n))
    except (CdbError, ValueError) as exc:
        print(f"mmclient: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
