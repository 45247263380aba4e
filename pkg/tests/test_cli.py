from __future__ import annotations

import subprocess
import sys

import pytest

from conftest import record_of
from oracles import scan_records
from vlab.broker import Status
from vlab.cdb import CdbServer, read_index
from vlab.cli import EXIT_CONSTRAINT, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from vlab.fabric import read_trace
from vlab.run_gen import read_run_file
from vlab.workspace import bundled


def _report_fields(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def project(tmp_path):
    assert main(["scaffold", str(tmp_path / "ws"), "--records", "60", "--seed", "4"]) == EXIT_OK
    return tmp_path / "ws"


def test_index_three_records(tmp_path):
    db = tmp_path / "a.db"
    db.write_bytes(record_of(100) + record_of(250) + record_of(80))
    assert main(["index", str(db), str(tmp_path / "a.idx")]) == EXIT_OK
    first = (tmp_path / "a.idx").read_bytes()
    assert first.decode().splitlines()[1:] == ["1 0 100", "2 100 250", "3 350 80"]
    assert read_index(first).record_count == 3
    assert main(["index", str(db), str(tmp_path / "a.idx")]) == EXIT_OK
    assert (tmp_path / "a.idx").read_bytes() == first


def test_index_errors(tmp_path, capsys):
    assert main(["index", str(tmp_path / "missing.db"), str(tmp_path / "x.idx")]) == EXIT_RUNTIME
    (tmp_path / "empty.db").write_text("no records here\n")
    assert main(["index", str(tmp_path / "empty.db"), str(tmp_path / "x.idx")]) == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err.lower()


def test_generate_default_sweep(tmp_path, capsys):
    plan = tmp_path / "docking.plan"
    plan.write_text(bundled("docking.plan"))
    out = tmp_path / "jobs.run"
    assert main(["generate", str(plan), "-o", str(out)]) == EXIT_OK
    assert len(read_run_file(out.read_text())) == 2000
    assert capsys.readouterr().out == f"{out}: 2000 jobs\n"
    assert main(["generate", str(plan), "--select", "ligand_number=1..3"]) == EXIT_OK
    assert len(read_run_file(capsys.readouterr().out)) == 3


@pytest.mark.parametrize("select", ["ligand_number=0..3", "nope=1..2", "ligand_number", "random_seed=x"])
def test_generate_bad_selection(tmp_path, select):
    plan = tmp_path / "docking.plan"
    plan.write_text(bundled("docking.plan"))
    assert main(["generate", str(plan), "--select", select]) in (EXIT_USAGE, EXIT_RUNTIME)


def test_check_reports_unresolved_placemarker(tmp_path, capsys):
    plan = tmp_path / "bad.plan"
    plan.write_text("parameter a integer default 1;\ntask main\n  node:execute echo $b\nendtask\n")
    assert main(["check", str(plan)]) == EXIT_RUNTIME
    assert "b" in capsys.readouterr().err
    good = tmp_path / "good.plan"
    good.write_text(bundled("docking.plan"))
    assert main(["check", str(good)]) == EXIT_OK


def test_fetch_stat_ping(small_db, server, tmp_path, capsys):
    _, data = small_db
    out = tmp_path / "out"
    out.mkdir()
    assert main(["fetch", server.endpoint, "small.db", "5", "--dir", str(out)]) == EXIT_OK
    assert (out / "5.mol2").read_bytes() == scan_records(data)[4]
    assert main(["fetch", server.endpoint, "small.db", "99", "--dir", str(out)]) == EXIT_RUNTIME
    capsys.readouterr()
    assert main(["stat", server.endpoint, "small.db"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "40"
    assert main(["ping", server.endpoint]) == EXIT_OK


def test_select_replica(tmp_path, capsys):
    cat = tmp_path / "replicas"
    cat.write_text("a.db h1:1 cost=5\na.db h2:1 cost=2\n")
    assert main(["select", str(cat), "a.db", "--policy", "cost"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "h2:1"


def test_mirror_run_meets_its_deadline(project, tmp_path, capsys):
    report = tmp_path / "report.txt"
    code = main([
        "run", str(project / "docking.plan"), str(project / "mirror.testbed"),
        "--deadline", "3600", "--budget", "50000", "--strategy", "time",
        "--select", "ligand_number=1..200", "--report", str(report),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    fields = _report_fields(out)
    assert fields["status"] == "completed"
    assert fields["jobs_completed"] == "200"
    assert float(fields["time_to_finish_min"]) <= 60
    assert report.read_text() == out
    assert report.with_suffix(".csv").read_text().startswith("resource,price,jobs_executed,spent_gd\n")


def test_cost_strategy_is_cheaper(project, capsys):
    costs = {}
    for strategy in ("time", "cost"):
        main([
            "run", str(project / "docking.plan"), str(project / "mirror.testbed"),
            "--deadline", "3600", "--budget", "50000", "--strategy", strategy,
            "--select", "ligand_number=1..200",
        ])
        costs[strategy] = float(_report_fields(capsys.readouterr().out)["total_cost_gd"])
    assert costs["cost"] < costs["time"]


def test_tiny_budget_stops_with_constraint_exit(project, capsys):
    code = main([
        "run", str(project / "docking.plan"), str(project / "mirror.testbed"),
        "--deadline", "3600", "--budget", "100", "--strategy", "time",
        "--select", "ligand_number=1..200",
    ])
    assert code == EXIT_CONSTRAINT
    fields = _report_fields(capsys.readouterr().out)
    assert fields["status"] == Status.BUDGET_EXHAUSTED.value
    assert float(fields["total_cost_gd"]) <= 100


def test_same_seed_same_report_and_trace(project, tmp_path, capsys):
    outputs = []
    for n in (1, 2):
        trace = tmp_path / f"trace{n}.csv"
        main([
            "run", str(project / "docking.plan"), str(project / "mirror.testbed"),
            "--deadline", "3600", "--budget", "50000", "--strategy", "cost", "--seed", "3",
            "--select", "ligand_number=1..100", "--trace", str(trace),
        ])
        outputs.append((capsys.readouterr().out, trace.read_text()))
    assert outputs[0] == outputs[1]
    assert read_trace(outputs[0][1])


def test_run_from_run_file(project, tmp_path, capsys):
    run = tmp_path / "jobs.run"
    assert main(["generate", str(project / "docking.plan"), "--select", "ligand_number=1..10", "-o", str(run)]) == 0
    code = main([
        "run", str(project / "docking.plan"), str(project / "mirror.testbed"),
        "--deadline", "3600", "--budget", "50000", "--strategy", "time", "--run", str(run),
    ])
    assert code == EXIT_OK
    assert _report_fields(capsys.readouterr().out)["jobs_completed"] == "10"


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["run", "p", "t", "--deadline", "0", "--budget", "1", "--strategy", "time"],
        ["run", "p", "t", "--deadline", "10", "--budget", "-5", "--strategy", "time"],
        ["run", "p", "t", "--deadline", "10", "--budget", "5", "--strategy", "fastest"],
        ["fetch", "h:1", "db", "zero"],
    ],
)
def test_bad_flags_are_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_missing_testbed_is_a_runtime_error(project):
    code = main([
        "run", str(project / "docking.plan"), str(project / "nope.testbed"),
        "--deadline", "3600", "--budget", "50000", "--strategy", "time",
    ])
    assert code == EXIT_RUNTIME


def test_local_run_end_to_end(project, tmp_path, capsys, monkeypatch):
    dbs = {"aldrich_300.db": (project / "cdb" / "aldrich_300.db", project / "cdb" / "aldrich_300.db.idx")}
    testbed = tmp_path / "local.testbed"
    testbed.write_text("node 2 1 fixed(1) seed=1\n")
    with CdbServer(("127.0.0.1", 0), dbs) as srv:
        host, port = srv.endpoint.rsplit(":", 1)
        monkeypatch.setenv("MOCK_DOCK_SECONDS", "0.2")
        code = main([
            "run", str(project / "docking.plan"), str(testbed), "--mode", "local",
            "--deadline", "300", "--budget", "1000", "--strategy", "time", "--tick", "0.25",
            "--select", "ligand_number=1..4", "--select", f"CDB_SERVER={host}", "--select", f"CDB_PORT_NO={port}",
            "--work", str(tmp_path / "work"),
        ])
    assert code == EXIT_OK
    assert _report_fields(capsys.readouterr().out)["jobs_completed"] == "4"
    assert len(list((project / "results").glob("dock_out.*"))) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "run" in proc.stdout
