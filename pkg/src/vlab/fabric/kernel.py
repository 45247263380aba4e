"""Stand-in for the docking executable.

Invoked as ``<kernel> -i <config> -o <outfile>`` with a docking-style config
(``key value`` lines). Checks the ligand file named by ``ligand_atom_file``,
spins for ``MOCK_DOCK_SECONDS`` (default 1) of wall time, then writes the
echoed config plus a ``SCORE`` line to ``<outfile>`` and the three ligand
output files the config names.

Exit status: 0 ok, 1 unreadable config or bad usage, 2 missing or invalid
molecule file.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from pathlib import Path

MARKER = b"@<TRIPOS>MOLECULE"
OUTPUT_KEYS = ("ligand_contact_file", "ligand_chemical_file", "ligand_energy_file")


def read_config(text: str) -> dict[str, str]:
    config = {}
    for line in text.splitlines():
        parts = line.split(None, 1)
        if len(parts) == 2 and not line.startswith("."):
            config[parts[0]] = parts[1].strip()
    return config


def score(molecule: bytes) -> str:
    return hashlib.sha256(molecule).hexdigest()[:16]


def busy_work(seconds: float) -> None:
    deadline = time.monotonic() + seconds
    h = hashlib.sha256()
    while time.monotonic() < deadline:
        for _ in range(200):
            h.update(b"x")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dock", description=__doc__.splitlines()[0])
    parser.add_argument("-i", dest="config", required=True)
    parser.add_argument("-o", dest="output", required=True)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        text = Path(args.config).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        print(f"dock: cannot read config: {exc}", file=sys.stderr)
        return 1
    config = read_config(text)
    ligand = config.get("ligand_atom_file")
    if not ligand:
        print("dock: config has no ligand_atom_file", file=sys.stderr)
        return 1
    try:
        molecule = Path(ligand).read_bytes()
    except OSError as exc:
        print(f"dock: cannot read molecule file: {exc}", file=sys.stderr)
        return 2
    if not molecule.startswith(MARKER):
        print(f"dock: {ligand} is not a MOL2 record", file=sys.stderr)
        return 2
    try:
        seconds = float(os.environ.get("MOCK_DOCK_SECONDS", "1"))
    except ValueError:
        seconds = 1.0
    busy_work(max(seconds, 0.0))
    result = f"SCORE {score(molecule)}\n"
    Path(args.output).write_text(text + ("" if text.endswith("\n") else "\n") + result)
    for key in OUTPUT_KEYS:
        name = config.get(key)
        if name:
            Path(name).write_bytes(molecule + f"# {key} {result}".encode())
    return 0


if __name__ == "__main__":
    sys.exit(main())
