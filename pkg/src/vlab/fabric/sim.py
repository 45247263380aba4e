"""Deterministic discrete-event grid.

Each resource has ``cpus`` single-CPU slots and a FIFO queue for work that
arrives while every slot is busy. A job holds its slot from start to finish;
while the resource is outside an availability window the job is suspended
(holds the slot, makes no progress). A job's progress is a molecule-fetch
wait (wall time only) followed by its sampled CPU service time.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .agent import AgentState, ExecutionRecord, staged_names
from .testbed import Availability, SimResource

__all__ = ["SimEvent", "SimGrid", "simulate"]


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: str  # complete, fail, limit, avail-up, avail-down
    resource: str
    job: str = ""
    record: ExecutionRecord | None = None


@dataclass
class _Run:
    job: str
    resource: str
    start: float
    fetch: float
    service: float
    fail_cpu: float | None
    cpu_limit: float
    token: int = 0


@dataclass
class _Node:
    res: SimResource
    avail: Availability
    rng: random.Random
    running: dict[str, _Run] = field(default_factory=dict)
    queue: deque = field(default_factory=deque)  # (job, cpu_limit)
    agent: AgentState | None = None


class SimGrid:
    def __init__(
        self,
        resources: Iterable[SimResource],
        seed: int = 0,
        outputs: Callable[[str], list[str]] | None = None,
    ):
        self.nodes: dict[str, _Node] = {}
        self.log: list[str] = []
        self.outputs = outputs or (lambda job: [])
        self._heap: list[tuple[float, int, str, str, str, int]] = []
        self._seq = itertools.count()
        self._tokens = itertools.count(1)
        self.now = 0.0
        for res in resources:
            if res.name in self.nodes:
                raise ValueError(f"duplicate resource {res.name!r}")
            avail = Availability(res.availability)
            rng = random.Random(f"{seed}:{res.name}:{res.seed}")
            self.nodes[res.name] = _Node(res, avail, rng)
            for t, up in avail.boundaries:
                self._push(t, "avail-up" if up else "avail-down", res.name, "", 0)

    # -- bookkeeping ---------------------------------------------------------

    def _push(self, t: float, kind: str, resource: str, job: str, token: int) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), kind, resource, job, token))

    def _emit(self, t: float, text: str) -> None:
        self.log.append(f"{t:.6f} {text}")

    def _stale(self, entry) -> bool:
        t, _, kind, resource, job, token = entry
        if kind.startswith("avail"):
            return False
        run = self.nodes[resource].running.get(job)
        return run is None or run.token != token

    def next_time(self) -> float:
        while self._heap and self._stale(self._heap[0]):
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else math.inf

    def busy(self) -> bool:
        return any(n.running or n.queue for n in self.nodes.values())

    def executing(self, resource: str, t: float | None = None) -> int:
        node = self.nodes[resource]
        t = self.now if t is None else t
        return len(node.running) if node.avail.is_up(t) else 0

    # -- agents --------------------------------------------------------------

    def deploy_agent(self, resource: str, plan=None) -> AgentState:
        """Stage nodestart files once per node; later calls are no-ops."""
        node = self.nodes[resource]
        if node.agent is None:
            node.agent = AgentState(resource, True, staged_names(plan), deployments=1)
            self._emit(self.now, f"deploy {resource} staged={len(node.agent.staged_files)}")
        return node.agent

    # -- job lifecycle ---------------------------------------------------------

    def dispatch(self, job: str, resource: str, now: float, cpu_limit: float = math.inf) -> None:
        node = self.nodes[resource]
        if node.agent is None:
            self.deploy_agent(resource)
        self.now = max(self.now, now)
        self._emit(now, f"dispatch {resource} {job}")
        if len(node.running) < node.res.cpus:
            self._start(node, job, now, cpu_limit)
        else:
            node.queue.append((job, cpu_limit))

    def _start(self, node: _Node, job: str, now: float, cpu_limit: float) -> None:
        service = node.res.model.sample(node.rng)
        fail_cpu = None
        if node.res.fail_prob and node.rng.random() < node.res.fail_prob:
            fail_cpu = service * node.rng.random()
        run = _Run(job, node.res.name, now, node.res.fetch_latency, service, fail_cpu, cpu_limit)
        node.running[job] = run
        self._emit(now, f"start {node.res.name} {job} service={service:.6f}")
        self._schedule(run)

    def _schedule(self, run: _Run) -> None:
        node = self.nodes[run.resource]
        options = [(run.service, "complete")]
        if run.fail_cpu is not None:
            options.append((run.fail_cpu, "fail"))
        if run.cpu_limit < run.service:
            options.append((run.cpu_limit, "limit"))
        cpu, kind = min(options, key=lambda o: o[0])
        run.token = next(self._tokens)
        t = node.avail.advance(run.start, run.fetch + cpu)
        if math.isfinite(t):
            self._push(t, kind, run.resource, run.job, run.token)

    def _cpu_used(self, run: _Run, t: float) -> float:
        progressed = self.nodes[run.resource].avail.usable_between(run.start, t)
        return min(max(progressed - run.fetch, 0.0), run.service)

    def _finish(self, node: _Node, run: _Run, t: float, outcome: str, cpu: float, reason: str = "") -> ExecutionRecord:
        del node.running[run.job]
        outputs = self.outputs(run.job) if outcome == "ok" else []
        record = ExecutionRecord(run.job, run.resource, run.start, t, cpu, outcome, tuple(outputs), reason)
        suffix = f" reason={reason}" if reason else ""
        self._emit(t, f"{'complete' if outcome == 'ok' else 'abort'} {run.resource} {run.job} cpu={cpu:.6f}{suffix}")
        if node.queue:
            job, limit = node.queue.popleft()
            self._start(node, job, t, limit)
        return record

    def step(self) -> SimEvent:
        """Process the next pending event."""
        if self.next_time() == math.inf:
            raise IndexError("no pending events")
        t, _, kind, resource, job, _ = heapq.heappop(self._heap)
        self.now = t
        node = self.nodes[resource]
        if kind.startswith("avail"):
            self._emit(t, f"{kind} {resource}")
            return SimEvent(t, kind, resource)
        run = node.running[job]
        if kind == "limit":
            self._emit(t, f"limit {resource} {job} cpu={run.cpu_limit:.6f}")
            return SimEvent(t, kind, resource, job)
        if kind == "fail":
            record = self._finish(node, run, t, "failed", run.fail_cpu, "error")
        else:
            record = self._finish(node, run, t, "ok", run.service)
        return SimEvent(t, kind, resource, job, record)

    def extend(self, job: str, resource: str, cpu_limit: float) -> None:
        run = self.nodes[resource].running[job]
        run.cpu_limit = cpu_limit
        self._schedule(run)

    def kill(self, job: str, resource: str, now: float, reason: str = "killed") -> ExecutionRecord:
        """Stop a running or queued job; returns its (failed) execution record."""
        node = self.nodes[resource]
        self.now = max(self.now, now)
        for i, (queued, _) in enumerate(node.queue):
            if queued == job:
                del node.queue[i]
                self._emit(now, f"abort {resource} {job} cpu=0.000000 reason={reason}")
                return ExecutionRecord(job, resource, now, now, 0.0, "failed", (), reason)
        run = node.running[job]
        cpu = min(self._cpu_used(run, now), run.cpu_limit)
        return self._finish(node, run, now, "failed", cpu, reason)


def simulate(
    resources: Iterable[SimResource],
    jobs: Iterable[tuple[float, str, str]],
    horizon: float = math.inf,
    seed: int = 0,
) -> tuple[list[str], list[ExecutionRecord], bool]:
    """Run a fixed job stream through the grid.

    ``jobs`` holds ``(dispatch_time, job, resource)`` triples. Returns the event
    log, the execution records in completion order, and whether the run was
    truncated at ``horizon`` with events still pending.
    """
    grid = SimGrid(resources, seed)
    stream = sorted(jobs, key=lambda j: j[0])
    records: list[ExecutionRecord] = []
    i = 0
    while True:
        t_next = grid.next_time()
        t_dispatch = stream[i][0] if i < len(stream) else math.inf
        if t_dispatch == math.inf and not grid.busy():
            return grid.log, records, False
        t = min(t_next, t_dispatch)
        if t > horizon or t == math.inf:
            grid.log.append(f"{horizon:.6f} truncated")
            return grid.log, records, True
        if t_dispatch <= t_next:
            _, job, res = stream[i]
            i += 1
            grid.dispatch(job, res, t_dispatch)
            continue
        event = grid.step()
        if event.kind == "limit":
            records.append(grid.kill(event.job, event.resource, event.time, "limit"))
        elif event.record is not None:
            records.append(event.record)
