"""Acceptance criteria 1-8; each test prints one PASS/FAIL line."""

from __future__ import annotations

import contextlib
import math
import random
import threading
import time

import pytest

import conftest
from oracles import scan_entries, scan_records
from vlab.broker import MICRO, ExperimentConfig, ResourceDesc, Status
from vlab.cdb import CdbClient, CdbServer, build_index, read_server_config
from vlab.experiment import run_local, run_simulated
from vlab.fabric import ServiceModel, SimResource, emit_trace, parse_testbed
from vlab.plan_lang import enumerate_values, parse_plan, substitute
from vlab.run_gen import generate_jobs
from vlab.workspace import bundled, scaffold, synthetic_record, write_database

SEED = 0

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(n: int, title: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        line = f"CRITERION {n} FAIL  {title}: {type(exc).__name__}: {exc}".splitlines()[0]
        conftest.VERDICTS[n] = line
        print(line)
        raise
    line = f"CRITERION {n} PASS  {title} ({time.perf_counter() - t0:.2f}s)"
    conftest.VERDICTS[n] = line
    print(line)


def _mirror():
    return parse_testbed(bundled("mirror.testbed"))


def _mirror_run(strategy: str, seed: int = SEED):
    plan = parse_plan(bundled("docking.plan"))
    run = generate_jobs(plan, {"ligand_number": range(1, 201)})
    return run_simulated(run, _mirror(), ExperimentConfig(3600, 50_000, strategy), seed=seed, plan=plan)


def test_criterion_1_plan_language():
    with criterion(1, "plan parse and 2000-job default sweep"):
        t0 = time.perf_counter()
        plan = parse_plan(bundled("docking.plan"))
        databases = plan.parameter("database_name").domain
        assert len(databases.values) == 20
        assert databases.default == "aldrich_300"
        assert len(enumerate_values(plan.parameter("ligand_number"))) == 2000
        assert len(generate_jobs(plan)) == 2000
        assert time.perf_counter() - t0 < 1.0


def test_criterion_2_substitution():
    with criterion(2, "config template substitution"):
        plan = parse_plan(bundled("docking.plan"))
        bindings = {d.name: enumerate_values(d)[0] for d in plan.parameters}
        bindings.update(ligand_number=5, HOME="/home/u", receptor_site_file="ece.sph", score_grid_prefix="ece")
        out = substitute(bundled("dock_base"), bindings)
        lines = out.splitlines()
        assert "ligand_atom_file      5.mol2" in lines
        assert "receptor_site_file    /home/u/dock_inputs/ece.sph" in lines
        assert "score_grid_prefix     /home/u/dock_inputs/ece" in lines
        assert "$" not in out


def _random_database(rng: random.Random) -> bytes:
    count = round(math.exp(rng.uniform(math.log(10), math.log(2000))))
    return b"".join(
        synthetic_record(i, round(math.exp(rng.uniform(math.log(50), math.log(50_000)))), rng)
        for i in range(1, count + 1)
    )


def test_criterion_3_cdb_oracle(tmp_path):
    with criterion(3, "50 random databases match the line-scan oracle"):
        t0 = time.perf_counter()
        rng = random.Random(2024)
        fetched = 0
        for k in range(50):
            data = _random_database(rng)
            path = tmp_path / f"d{k}.db"
            idx = write_database(path, data)
            index = build_index(data)
            assert list(zip(index.offsets, index.lengths)) == scan_entries(data)
            assert sum(index.lengths) == len(data) - index.offsets[0]
            records = scan_records(data)
            with CdbServer(("127.0.0.1", 0), {path.name: (path, idx)}) as srv, CdbClient(srv.endpoint) as client:
                for n in range(1, len(records) + 1):
                    assert client.get(path.name, n) == records[n - 1], f"{path.name} record {n}"
                    fetched += 1
            path.unlink()
        print(f"  {fetched} records fetched")
        assert time.perf_counter() - t0 < 60


def test_criterion_4_concurrent_server(tmp_path):
    with criterion(4, "32 clients x 100 GETs"):
        t0 = time.perf_counter()
        rng = random.Random(4)
        data = b"".join(synthetic_record(i, rng.randint(50, 5000), rng) for i in range(1, 501))
        path = tmp_path / "c.db"
        idx = write_database(path, data)
        records = scan_records(data)
        good: list[int] = []
        bad: list[str] = []

        def client_loop(seed: int) -> None:
            r = random.Random(seed)
            try:
                with CdbClient(srv.endpoint) as client:
                    for _ in range(100):
                        n = r.randint(1, len(records))
                        (good if client.get("c.db", n) == records[n - 1] else bad).append(n)
            except Exception as exc:  # noqa: BLE001
                bad.append(repr(exc))

        with CdbServer(("127.0.0.1", 0), {"c.db": (path, idx)}) as srv:
            threads = [threading.Thread(target=client_loop, args=(s,)) for s in range(32)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        assert bad == []
        assert len(good) == 3200
        assert time.perf_counter() - t0 < 30


def test_criterion_5_mirror_scenario():
    with criterion(5, "mirror testbed TimeOpt vs CostOpt"):
        t0 = time.perf_counter()
        tb = _mirror()
        assert [r.cpus for r in tb] == [4, 4, 4, 2, 8]
        assert [r.price for r in tb] == [1, 2, 1, 3, 1]
        time_opt, cost_opt = _mirror_run("time"), _mirror_run("cost")
        for result in (time_opt, cost_opt):
            assert result.report.status is Status.COMPLETED
            assert result.state.finish_time <= 3600
            assert result.report.total_cost_gd <= 50_000
            assert sum(r.jobs for r in result.report.rows) == 200
        assert 1800 <= time_opt.state.finish_time <= 2400
        assert cost_opt.report.total_cost_gd < time_opt.report.total_cost_gd
        assert time_opt.state.finish_time <= cost_opt.state.finish_time
        jobs = {r.resource: r.jobs for r in cost_opt.report.rows}
        dear = next(r.name for r in tb if r.price == 3)
        assert jobs[dear] == min(jobs.values())
        assert all(jobs[dear] < n for name, n in jobs.items() if name != dear)
        print(f"  time: {time_opt.state.finish_time / 60:.1f} min {time_opt.report.total_cost_gd:.0f} G$")
        print(f"  cost: {cost_opt.state.finish_time / 60:.1f} min {cost_opt.report.total_cost_gd:.0f} G$ {jobs}")
        assert time.perf_counter() - t0 < 10


def _random_scenario(rng: random.Random):
    resources = []
    for i in range(rng.randint(1, 5)):
        kind = rng.choice(["fixed", "uniform", "lognormal"])
        if kind == "fixed":
            model = ServiceModel("fixed", (rng.uniform(5, 200),))
        elif kind == "uniform":
            lo = rng.uniform(5, 150)
            model = ServiceModel("uniform", (lo, lo + rng.uniform(0, 100)))
        else:
            model = ServiceModel("lognormal", (rng.uniform(2, 5), rng.uniform(0.1, 1)))
        windows = ((0.0, math.inf),)
        if rng.random() < 0.3:
            a = rng.uniform(50, 1000)
            windows = ((0.0, a), (a + rng.uniform(10, 800), math.inf))
        resources.append(
            SimResource(
                ResourceDesc(f"r{i}", rng.randint(1, 8), rng.choice([0, 0.5, 1, 2, 3, 5])),
                model,
                seed=rng.randrange(1000),
                availability=windows,
                fetch_latency=rng.choice([0, 0, 5, 30]),
                fail_prob=rng.choice([0, 0, 0.05, 0.2]),
            )
        )
    config = ExperimentConfig(
        deadline=rng.uniform(100, 5000),
        budget=rng.choice([rng.uniform(1, 200), rng.uniform(200, 5000), rng.uniform(5000, 100_000)]),
        strategy=rng.choice(["time", "cost"]),
        tick=rng.choice([1, 5, 10, 30]),
    )
    return resources, config, rng.randint(0, 80), rng.randrange(10_000)


def test_criterion_6_constraint_safety():
    with criterion(6, "200 random scenarios never overspend"):
        t0 = time.perf_counter()
        rng = random.Random(6)
        seen = {s: 0 for s in Status if s.terminal}
        for k in range(200):
            resources, config, n_jobs, seed = _random_scenario(rng)
            result = run_simulated([f"j{i}" for i in range(n_jobs)], resources, config, seed=seed)
            budget = round(config.budget * MICRO)
            for tick in result.ticks:
                assert tick.spent <= budget, f"scenario {k}: spent {tick.spent} > {budget} at t={tick.t}"
                assert tick.committed <= budget, f"scenario {k}: committed over budget at t={tick.t}"
            state = result.state
            status = result.report.status
            assert status.terminal and not state.running
            seen[status] += 1
            if status is Status.COMPLETED:
                assert not state.pending
                assert len(state.done) + len(state.failed) == n_jobs
            elif status is Status.DEADLINE_MISSED:
                assert state.finish_time > config.deadline
            else:
                assert state.pending
                assert state.finish_time <= config.deadline
                cheapest = min(
                    math.ceil(led.desc.price * (sum(led.durations) / len(led.durations) if led.durations else config.default_job_time) * MICRO)
                    for led in state.usable()
                )
                assert budget - state.spent < cheapest
        print(f"  outcomes: { {s.value: n for s, n in seen.items()} }")
        assert time.perf_counter() - t0 < 120


def test_criterion_7_local_end_to_end(tmp_path, monkeypatch):
    with criterion(7, "20 local jobs through the CDB server and mock kernel"):
        t0 = time.perf_counter()
        root = tmp_path / "ws"
        plan_path = scaffold(root, records=50, seed=7)
        plan = parse_plan(plan_path.read_text(), str(plan_path))
        dbs = read_server_config((root / "cdb" / "servers.conf").read_text(), root / "cdb")
        monkeypatch.setenv("MOCK_DOCK_SECONDS", "1")
        with CdbServer(("127.0.0.1", 0), dbs) as srv:
            host, port = srv.endpoint.rsplit(":", 1)
            run = generate_jobs(plan, {"ligand_number": range(1, 21), "CDB_SERVER": [host], "CDB_PORT_NO": [port]})
            result = run_local(plan, run, [ResourceDesc("node", 4, 1)], ExperimentConfig(600, 10_000, tick=0.5), root, tmp_path / "work")
        assert result.report.status is Status.COMPLETED
        assert result.report.completed == 20
        assert len(list((root / "results").glob("dock_out.*"))) == 20
        assert [line for line in result.log if line.startswith("deploy")] == ["deploy node staged=7"]
        print(f"  finished after {result.state.finish_time:.1f}s of wall time")
        assert time.perf_counter() - t0 < 30


def test_criterion_8_determinism():
    with criterion(8, "repeat mirror runs are byte-identical"):
        for strategy in ("time", "cost"):
            one, two = _mirror_run(strategy, seed=11), _mirror_run(strategy, seed=11)
            assert emit_trace(one.trace) == emit_trace(two.trace)
            assert one.report.to_text() == two.report.to_text()
            assert one.report.to_csv() == two.report.to_csv()
            assert one.log == two.log
