from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vlab.cdb import CdbServer
from vlab.plan_lang import parse_plan
from vlab.workspace import bundled, synthetic_database, write_database


def record_of(size: int, tag: str = "") -> bytes:
    """A marker-prefixed record of exactly ``size`` bytes."""
    head = b"@<TRIPOS>MOLECULE\n" + tag.encode()
    assert size >= len(head) + 1
    return head + b"x" * (size - len(head) - 1) + b"\n"


@pytest.fixture(scope="session")
def docking_source() -> str:
    return bundled("docking.plan")


@pytest.fixture(scope="session")
def docking_plan(docking_source):
    return parse_plan(docking_source, "docking.plan")


@pytest.fixture
def small_db(tmp_path) -> tuple[Path, bytes]:
    data = synthetic_database(40, random.Random(7), 60, 600)
    path = tmp_path / "small.db"
    write_database(path, data)
    return path, data


@pytest.fixture
def server(small_db):
    path, _ = small_db
    srv = CdbServer(("127.0.0.1", 0), {"small.db": (path, path.with_name(path.name + ".idx"))})
    with srv:
        yield srv


# acceptance verdicts, filled in by test_acceptance and echoed after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
