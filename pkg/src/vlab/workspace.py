"""Synthetic molecule databases and a ready-to-run experiment directory."""

from __future__ import annotations

import random
from importlib.resources import files
from pathlib import Path

from .cdb.index import MARKER, build_index, write_index

PARAMETER_FILES = ("vdw.defn", "chem.defn", "chem_score.tbl", "flex.defn", "flex_drive.tbl")


def bundled(name: str) -> str:
    """Text of a file shipped in ``vlab/data``."""
    return files("vlab.data").joinpath(name).read_text()


def synthetic_record(i: int, size: int, rng: random.Random) -> bytes:
    """One MOL2-shaped record of exactly ``size`` bytes (at least the header)."""
    head = MARKER + f"\nmol_{i}\n".encode()
    body_len = max(size - len(head) - 1, 0)
    atoms = []
    total = 0
    while total < body_len:
        line = f"{len(atoms) + 1} C {rng.uniform(-9, 9):.4f} {rng.uniform(-9, 9):.4f} C.3\n".encode()
        atoms.append(line)
        total += len(line)
    body = b"".join(atoms)[:body_len]
    body = body.replace(b"@", b"#")  # never a marker inside a record
    return head + body + b"\n"


def synthetic_database(count: int, rng: random.Random, min_size: int = 50, max_size: int = 2000) -> bytes:
    if count < 1:
        raise ValueError("count must be positive")
    return b"".join(synthetic_record(i, rng.randint(min_size, max_size), rng) for i in range(1, count + 1))


def write_database(path: Path, data: bytes) -> Path:
    """Write ``data`` and its index (``<path>.idx``); returns the index path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    idx = path.with_name(path.name + ".idx")
    idx.write_bytes(write_index(build_index(data, path.name)))
    return idx


def scaffold(root: Path, records: int = 200, seed: int = 0, database: str = "aldrich_300") -> Path:
    """Lay out a docking experiment under ``root``.

    Creates the plan, the two dock input templates, stub parameter files, an
    empty ``results/`` directory, a synthetic ``cdb/<database>.db`` with its
    index, and ``cdb/servers.conf`` for ``vlab serve``. Returns the plan path.
    """
    root = Path(root)
    (root / "dock_inputs").mkdir(parents=True, exist_ok=True)
    (root / "parameter").mkdir(exist_ok=True)
    (root / "results").mkdir(exist_ok=True)
    plan = root / "docking.plan"
    plan.write_text(bundled("docking.plan"))
    (root / "dock_inputs" / "dock_base").write_text(bundled("dock_base"))
    (root / "dock_inputs" / "get_molecule").write_text(bundled("get_molecule"))
    for name in PARAMETER_FILES:
        (root / "parameter" / name).write_text(f"# {name} placeholder\n")
    rng = random.Random(seed)
    write_database(root / "cdb" / f"{database}.db", synthetic_database(records, rng))
    (root / "cdb" / "servers.conf").write_text(f"{database}.db {database}.db\n")
    (root / "mirror.testbed").write_text(bundled("mirror.testbed"))
    return plan
