"""Drive a broker against a fabric, tick by tick, and collect report and trace."""

from __future__ import annotations

import queue
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .broker import Broker, Completion, ExperimentConfig, Report, ResourceDesc, ScheduleState, Status
from .fabric.agent import ExecutionRecord, result_names
from .fabric.local import LocalGrid
from .fabric.sim import SimGrid
from .fabric.testbed import SimResource
from .fabric.trace import TraceRow, snapshot
from .plan_lang import PlanFile
from .run_gen import RunFile

__all__ = ["ExperimentResult", "TickStat", "run_local", "run_simulated"]


@dataclass(frozen=True)
class TickStat:
    t: float
    spent: int  # micro-G$
    committed: int
    status: Status
    pending: int
    running: int


@dataclass
class ExperimentResult:
    report: Report
    state: ScheduleState
    trace: list[TraceRow] = field(default_factory=list)
    ticks: list[TickStat] = field(default_factory=list)
    records: list[ExecutionRecord] = field(default_factory=list)
    log: list[str] = field(default_factory=list)


def _tick_stat(broker: Broker) -> TickStat:
    s = broker.state
    return TickStat(s.clock, s.spent, s.committed, s.status, len(s.pending), len(s.running))


def _fold(broker: Broker, record: ExecutionRecord, budget_stop: bool = False, cancelled: bool = False) -> None:
    if record.outcome == "ok":
        broker.account(Completion(record.job, record.resource, record.cpu_seconds, record.end, record.start))
    else:
        broker.abort(record.job, record.resource, record.cpu_seconds, count_attempt=not (budget_stop or cancelled))


def _job_names(jobs: RunFile | Sequence[str]) -> list[str]:
    if isinstance(jobs, RunFile):
        return [j.jobname for j in jobs.jobs]
    return list(jobs)


def run_simulated(
    jobs: RunFile | Sequence[str],
    resources: Sequence[SimResource],
    config: ExperimentConfig,
    seed: int = 0,
    plan: PlanFile | None = None,
) -> ExperimentResult:
    """Run the experiment in virtual time on a :class:`SimGrid`."""
    names = _job_names(jobs)
    bindings = {j.jobname: j.bindings for j in jobs.jobs} if isinstance(jobs, RunFile) else {}
    grid = SimGrid(resources, seed, outputs=lambda job: result_names(plan, job, bindings.get(job, {})))
    broker = Broker(names, [r.desc for r in resources], config)
    for r in resources:
        grid.deploy_agent(r.name, plan)

    result = ExperimentResult(None, broker.state)  # type: ignore[arg-type]  # report set at the end
    records = result.records
    k = 0
    while True:
        t = k * config.tick
        while grid.next_time() <= t:
            event = grid.step()
            broker.advance(event.time)
            if event.kind == "limit":
                limit = broker.extend_lease(event.job, event.resource)
                if limit is not None:
                    grid.extend(event.job, event.resource, limit)
                    continue
                record = grid.kill(event.job, event.resource, event.time, "budget")
                records.append(record)
                _fold(broker, record, budget_stop=True)
            elif event.record is not None:
                records.append(event.record)
                _fold(broker, event.record)
        broker.advance(t)
        status = broker.check_constraints()
        if status is Status.RUNNING:
            for job, res, limit in broker.allocate():
                grid.dispatch(job, res, t, limit)
        elif broker.state.running and (status is Status.DEADLINE_MISSED or t > config.deadline):
            for job, res in sorted(broker.state.running.items()):
                record = grid.kill(job, res, t, "cancelled")
                records.append(record)
                _fold(broker, record, cancelled=True)
        result.trace.extend(snapshot(broker.state))
        result.ticks.append(_tick_stat(broker))
        if status.terminal and not broker.state.running:
            break
        k += 1
    result.report = broker.report()
    result.log = grid.log
    return result


def run_local(
    plan: PlanFile,
    run: RunFile,
    resources: Sequence[ResourceDesc],
    config: ExperimentConfig,
    base: Path,
    work: Path,
    home: Path | None = None,
    env: Mapping[str, str] | None = None,
    on_tick: Callable[[ExperimentResult], None] | None = None,
) -> ExperimentResult:
    """Run the experiment for real with local worker processes (wall-clock seconds)."""
    t0 = time.monotonic()

    def clock() -> float:
        return time.monotonic() - t0

    bindings = {j.jobname: j.bindings for j in run.jobs}
    grid = LocalGrid(list(resources), plan, bindings, base, work, home, env, clock)
    broker = Broker([j.jobname for j in run.jobs], resources, config)
    result = ExperimentResult(None, broker.state)  # type: ignore[arg-type]  # report set at the end
    failures = grid.deploy_all()
    for name, node in grid.nodes.items():
        if name in failures:
            broker.mark_unusable(name)
            result.log.append(f"deploy {name} failed: {failures[name]}")
        else:
            result.log.append(f"deploy {name} staged={len(node.agent.staged_files)}")
    budget_stops: set[str] = set()
    cancelled: set[str] = set()
    next_tick = 0.0
    try:
        while True:
            wait = max(0.0, next_tick - clock())
            try:
                record = grid.completed.get(timeout=wait)
            except queue.Empty:
                record = None
            while record is not None:
                result.records.append(record)
                broker.advance(max(broker.clock, record.end))
                _fold(broker, record, budget_stop=record.job in budget_stops, cancelled=record.job in cancelled)
                budget_stops.discard(record.job)
                cancelled.discard(record.job)
                try:
                    record = grid.completed.get_nowait()
                except queue.Empty:
                    record = None
            now = clock()
            if now < next_tick:
                continue
            broker.advance(max(broker.clock, now))
            for name, ledger in broker.state.resources.items():
                for job, lease in list(ledger.running.items()):
                    if job in budget_stops or job in cancelled:
                        continue
                    if now - lease.start + 2 * config.tick >= lease.cpu_limit:
                        if broker.extend_lease(job, name) is None:
                            budget_stops.add(job)
                            grid.cancel(job, name)
            status = broker.check_constraints()
            if status is Status.RUNNING:
                for job, res, _ in broker.allocate():
                    grid.dispatch(job, res)
            elif status is Status.DEADLINE_MISSED or now > config.deadline:
                for job, res in broker.state.running.items():
                    if job not in cancelled:
                        cancelled.add(job)
                        grid.cancel(job, res)
            result.trace.extend(snapshot(broker.state))
            result.ticks.append(_tick_stat(broker))
            if on_tick is not None:
                on_tick(result)
            if status.terminal and not broker.state.running:
                break
            next_tick += config.tick
    finally:
        grid.shutdown()
    result.report = broker.report()
    return result
