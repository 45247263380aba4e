"""Deadline- and budget-constrained (DBC) task farming.

The broker owns the schedule ledger and decides, once per tick, which pending
jobs go to which resources. Two strategies are supported:

* ``time`` fills every free CPU, fastest resources first, as long as the
  projected spend stays inside the budget.
* ``cost`` fills the cheapest price tier first and only engages dearer tiers
  while the projected finish time would overrun the deadline (all tiers are
  allowed during an initial warmup window).

Money is kept in integer micro-G$ so the budget invariant is exact. Every
running job holds a reservation; a job is charged its consumed CPU-seconds
times the resource price, capped at its reservation. Reservations are
extended while budget remains, otherwise the job is stopped and re-queued.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

MICRO = 1_000_000
RECENT_DURATIONS = 10


class Strategy(str, Enum):
    TIME = "time"
    COST = "cost"


class Status(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    DEADLINE_MISSED = "deadline-missed"
    BUDGET_EXHAUSTED = "budget-exhausted"

    @property
    def terminal(self) -> bool:
        return self is not Status.RUNNING


class BrokerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResourceDesc:
    name: str
    cpus: int
    price: float
    endpoint: object = None

    def __post_init__(self):
        if self.cpus < 1:
            raise ValueError(f"{self.name}: cpus must be at least 1")
        if self.price < 0 or not math.isfinite(self.price):
            raise ValueError(f"{self.name}: price must be a finite non-negative number")


@dataclass(frozen=True)
class ExperimentConfig:
    deadline: float
    budget: float
    strategy: Strategy = Strategy.TIME
    tick: float = 10.0
    default_job_time: float = 60.0
    rate_window: float = 300.0
    safety_margin: float = 0.10
    warmup: float = 60.0
    max_retries: int = 3

    def __post_init__(self):
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.tick <= 0 or self.default_job_time <= 0 or self.rate_window <= 0:
            raise ValueError("tick, default_job_time and rate_window must be positive")
        if not 0 <= self.safety_margin < 1:
            raise ValueError("safety_margin must lie in [0, 1)")
        object.__setattr__(self, "strategy", Strategy(self.strategy))


@dataclass(frozen=True)
class RateEstimate:
    resource: str
    rate: float
    window: float
    completed: int
    flag: str  # "prior", "measured" or "stalled"


def estimate_rate(
    resource: str,
    completions: Sequence[float],
    window: float,
    clock: float,
    cpus: int = 1,
    default_job_time: float = 60.0,
    since: float | None = None,
) -> RateEstimate:
    """Completion rate (jobs/s) over the trailing ``window`` seconds.

    ``since`` is when the resource first received work; the window is clipped
    to it so early estimates are not diluted by time the resource was unused.
    Without any completions the optimistic prior ``cpus / default_job_time``
    is returned.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if not completions:
        return RateEstimate(resource, cpus / default_job_time, 0.0, 0, "prior")
    used = window if since is None else min(window, clock - since)
    count = sum(1 for t in completions if clock - used < t <= clock)
    if used <= 0:
        return RateEstimate(resource, cpus / default_job_time, 0.0, 0, "prior")
    if count == 0:
        return RateEstimate(resource, 0.0, used, 0, "stalled")
    return RateEstimate(resource, count / used, used, count, "measured")


@dataclass
class Lease:
    job: str
    resource: str
    start: float
    reserved: int  # micro-G$
    cpu_limit: float  # CPU-seconds covered by the reservation


@dataclass(frozen=True)
class Completion:
    job: str
    resource: str
    cpu_seconds: float
    end: float
    start: float = 0.0


@dataclass
class ResourceLedger:
    desc: ResourceDesc
    assigned: int = 0
    done: int = 0
    aborted: int = 0
    spent: int = 0  # micro-G$
    first_dispatch: float | None = None
    completions: list[float] = field(default_factory=list)
    durations: deque = field(default_factory=lambda: deque(maxlen=RECENT_DURATIONS))
    running: dict[str, Lease] = field(default_factory=dict)

    @property
    def free(self) -> int:
        return self.desc.cpus - len(self.running)


@dataclass
class ScheduleState:
    jobs: tuple[str, ...]
    resources: dict[str, ResourceLedger]
    clock: float = 0.0
    pending: deque = field(default_factory=deque)
    running: dict[str, str] = field(default_factory=dict)
    done: dict[str, str] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    attempts: dict[str, int] = field(default_factory=dict)
    spent: int = 0  # micro-G$
    status: Status = Status.RUNNING
    finish_time: float | None = None
    last_completion: float = 0.0
    unusable: set = field(default_factory=set)

    def usable(self) -> list[ResourceLedger]:
        return [r for n, r in self.resources.items() if n not in self.unusable]

    @property
    def spent_gd(self) -> float:
        return self.spent / MICRO

    @property
    def committed(self) -> int:
        return self.spent + sum(lease.reserved for r in self.resources.values() for lease in r.running.values())


def new_state(jobs: Iterable[str], resources: Iterable[ResourceDesc]) -> ScheduleState:
    jobs = tuple(jobs)
    if len(set(jobs)) != len(jobs):
        raise ValueError("job names must be unique")
    ledgers = {}
    for desc in resources:
        if desc.name in ledgers:
            raise ValueError(f"duplicate resource {desc.name!r}")
        ledgers[desc.name] = ResourceLedger(desc)
    return ScheduleState(jobs, ledgers, pending=deque(jobs), attempts={j: 0 for j in jobs})


# --------------------------------------------------------------------------
# Projections


def expected_job_time(ledger: ResourceLedger, config: ExperimentConfig) -> float:
    if ledger.durations:
        return sum(ledger.durations) / len(ledger.durations)
    return config.default_job_time


def projected_cost(ledger: ResourceLedger, config: ExperimentConfig) -> int:
    """Micro-G$ one more job on this resource is expected to cost."""
    return math.ceil(ledger.desc.price * expected_job_time(ledger, config) * MICRO)


def rate_of(ledger: ResourceLedger, state: ScheduleState, config: ExperimentConfig) -> RateEstimate:
    return estimate_rate(
        ledger.desc.name,
        ledger.completions,
        config.rate_window,
        state.clock,
        ledger.desc.cpus,
        config.default_job_time,
        ledger.first_dispatch,
    )


def is_stalled(ledger: ResourceLedger, state: ScheduleState, config: ExperimentConfig) -> bool:
    """Busy for a whole rate window without finishing anything."""
    if not ledger.running:
        return False
    oldest = min(lease.start for lease in ledger.running.values())
    if state.clock - oldest < config.rate_window:
        return False
    return rate_of(ledger, state, config).flag == "stalled"


def throughput(ledger: ResourceLedger, state: ScheduleState, config: ExperimentConfig) -> float:
    """Jobs/s the resource is expected to deliver if all its CPUs are kept busy."""
    if is_stalled(ledger, state, config):
        return 0.0
    return ledger.desc.cpus / expected_job_time(ledger, config)


def projected_finish(state: ScheduleState, engaged: Sequence[ResourceLedger], config: ExperimentConfig) -> float:
    outstanding = len(state.pending) + sum(len(r.running) for r in engaged)
    rate = sum(throughput(r, state, config) for r in engaged)
    if outstanding == 0:
        return state.clock
    if rate <= 0:
        return math.inf
    return state.clock + outstanding / rate


# --------------------------------------------------------------------------
# Allocation


Assignment = tuple[str, str]  # (job, resource)


def _fill(state: ScheduleState, slots: list[tuple[tuple, ResourceLedger]], config: ExperimentConfig) -> list[Assignment]:
    """Hand pending jobs to ``slots`` in key order, skipping unaffordable ones."""
    budget = round(config.budget * MICRO)
    committed = state.committed
    pending = list(state.pending)
    out: list[Assignment] = []
    for _, ledger in sorted(slots, key=lambda s: s[0]):
        if len(out) >= len(pending):
            break
        cost = projected_cost(ledger, config)
        if committed + cost > budget:
            continue
        committed += cost
        out.append((pending[len(out)], ledger.desc.name))
    return out


def allocate_time_opt(state: ScheduleState, config: ExperimentConfig) -> list[Assignment]:
    """Fill every free CPU, fastest per-slot resources first; cheaper wins ties."""
    slots = []
    for ledger in state.usable():
        speed = 1.0 / expected_job_time(ledger, config)
        cost = projected_cost(ledger, config)
        for k in range(ledger.free):
            slots.append(((-speed, cost, k, ledger.desc.name), ledger))
    return _fill(state, slots, config)


def engaged_tiers(state: ScheduleState, config: ExperimentConfig) -> list[ResourceLedger]:
    """Resources the cost strategy may use at the current clock, cheapest first."""
    ordered = sorted(state.usable(), key=lambda r: (r.desc.price, r.desc.name))
    if state.clock < config.warmup:
        return ordered
    target = state.clock + (1.0 - config.safety_margin) * (config.deadline - state.clock)
    engaged: list[ResourceLedger] = []
    i = 0
    while i < len(ordered):
        price = ordered[i].desc.price
        while i < len(ordered) and ordered[i].desc.price == price:
            engaged.append(ordered[i])
            i += 1
        if projected_finish(state, engaged, config) <= target:
            break
    return engaged


def allocate_cost_opt(state: ScheduleState, config: ExperimentConfig) -> list[Assignment]:
    slots = []
    for ledger in engaged_tiers(state, config):
        cost = projected_cost(ledger, config)
        for k in range(ledger.free):
            slots.append(((ledger.desc.price, cost, k, ledger.desc.name), ledger))
    return _fill(state, slots, config)


# --------------------------------------------------------------------------
# Broker


class Broker:
    """Single-threaded scheduling loop state plus the operations that mutate it."""

    def __init__(self, jobs: Iterable[str], resources: Iterable[ResourceDesc], config: ExperimentConfig):
        self.config = config
        self.state = new_state(jobs, resources)
        self.budget = round(config.budget * MICRO)

    # -- queries -----------------------------------------------------------

    @property
    def clock(self) -> float:
        return self.state.clock

    def advance(self, clock: float) -> None:
        if clock < self.state.clock:
            raise BrokerError("clock moved backwards")
        self.state.clock = clock

    def ledger(self, name: str) -> ResourceLedger:
        return self.state.resources[name]

    # -- allocation --------------------------------------------------------

    def allocate(self) -> list[tuple[str, str, float]]:
        """Choose and commit this tick's assignments as (job, resource, cpu_limit)."""
        if self.state.status.terminal:
            return []
        if self.config.strategy is Strategy.TIME:
            picks = allocate_time_opt(self.state, self.config)
        else:
            picks = allocate_cost_opt(self.state, self.config)
        return [self.dispatch(job, res) for job, res in picks]

    def dispatch(self, job: str, resource: str) -> tuple[str, str, float]:
        state = self.state
        ledger = state.resources[resource]
        if job not in state.pending:
            raise BrokerError(f"{job} is not pending")
        if ledger.free <= 0:
            raise BrokerError(f"{resource} has no free CPU")
        cost = projected_cost(ledger, self.config)
        if state.committed + cost > self.budget:
            raise BrokerError(f"assigning {job} to {resource} would overcommit the budget")
        state.pending.remove(job)
        state.running[job] = resource
        state.attempts[job] += 1
        ledger.assigned += 1
        if ledger.first_dispatch is None:
            ledger.first_dispatch = state.clock
        limit = math.inf if ledger.desc.price == 0 else cost / (ledger.desc.price * MICRO)
        ledger.running[job] = Lease(job, resource, state.clock, cost, limit)
        return job, resource, limit

    # -- fabric feedback ---------------------------------------------------

    def _charge(self, lease: Lease, ledger: ResourceLedger, cpu_seconds: float) -> int:
        amount = min(math.ceil(max(cpu_seconds, 0.0) * ledger.desc.price * MICRO), lease.reserved)
        ledger.spent += amount
        self.state.spent += amount
        return amount

    def _release(self, job: str, resource: str) -> tuple[Lease, ResourceLedger]:
        state = self.state
        if state.running.get(job) != resource:
            if job in state.done:
                raise BrokerError(f"{job} already completed")
            raise BrokerError(f"{job} is not running on {resource}")
        ledger = state.resources[resource]
        del state.running[job]
        return ledger.running.pop(job), ledger

    def account(self, completion: Completion) -> int:
        """Fold a successful completion into the ledger; returns micro-G$ charged."""
        lease, ledger = self._release(completion.job, completion.resource)
        charged = self._charge(lease, ledger, completion.cpu_seconds)
        ledger.done += 1
        ledger.completions.append(completion.end)
        ledger.durations.append(max(completion.end - lease.start, 1e-9))
        self.state.done[completion.job] = completion.resource
        self.state.last_completion = max(self.state.last_completion, completion.end)
        return charged

    def abort(self, job: str, resource: str, cpu_seconds: float, *, count_attempt: bool = True) -> bool:
        """A job stopped without success: charge what it used and re-queue it.

        Returns False once the job has used up its retries and is marked
        failed for good. Budget stops pass ``count_attempt=False``.
        """
        lease, ledger = self._release(job, resource)
        self._charge(lease, ledger, cpu_seconds)
        ledger.aborted += 1
        state = self.state
        if not count_attempt:
            state.attempts[job] -= 1
        if state.attempts[job] > self.config.max_retries:
            state.failed[job] = resource
            return False
        state.pending.appendleft(job)
        return True

    def extend_lease(self, job: str, resource: str) -> float | None:
        """Grow a running job's reservation; returns the new CPU limit or None."""
        ledger = self.state.resources[resource]
        lease = ledger.running[job]
        if ledger.desc.price == 0:
            lease.cpu_limit = math.inf
            return lease.cpu_limit
        residual = self.budget - self.state.committed
        extra = min(projected_cost(ledger, self.config), residual)
        if extra <= 0:
            return None
        lease.reserved += extra
        lease.cpu_limit = lease.reserved / (ledger.desc.price * MICRO)
        return lease.cpu_limit

    def mark_unusable(self, resource: str) -> None:
        self.state.unusable.add(resource)

    # -- constraints and report ---------------------------------------------

    def cheapest_job_cost(self) -> int | None:
        usable = self.state.usable()
        if not usable:
            return None
        return min(projected_cost(r, self.config) for r in usable)

    def check_constraints(self) -> Status:
        return check_constraints(self.state, self.config, self.cheapest_job_cost())

    def report(self) -> "Report":
        return report(self.state)


def check_constraints(state: ScheduleState, config: ExperimentConfig, cheapest: int | None = None) -> Status:
    """Classify the experiment; terminal states never revert.

    ``cheapest`` is the lowest projected micro-G$ cost of one more job on any
    usable resource.
    """
    if state.status.terminal:
        return state.status
    status = Status.RUNNING
    budget = round(config.budget * MICRO)
    if not state.pending and not state.running:
        status = Status.COMPLETED
    elif state.clock > config.deadline:
        status = Status.DEADLINE_MISSED
    elif state.pending and cheapest is not None and budget - state.spent < cheapest:
        status = Status.BUDGET_EXHAUSTED
    if status.terminal:
        state.status = status
        state.finish_time = state.last_completion if status is Status.COMPLETED else state.clock
    return status


@dataclass(frozen=True)
class ReportRow:
    resource: str
    price: float
    jobs: int
    spent_gd: float


@dataclass(frozen=True)
class Report:
    rows: tuple[ReportRow, ...]
    total_cost_gd: float
    time_to_finish_min: float
    status: Status
    completed: int
    failed: int
    unfinished: int

    def to_text(self) -> str:
        width = max([len("resource")] + [len(r.resource) for r in self.rows])
        lines = [f"{'resource':<{width}}  {'price':>6}  {'jobs':>5}  {'spent_gd':>9}"]
        for r in self.rows:
            lines.append(f"{r.resource:<{width}}  {r.price:>6g}  {r.jobs:>5d}  {r.spent_gd:>9.0f}")
        lines.append(f"jobs_completed={self.completed}")
        lines.append(f"jobs_failed={self.failed}")
        lines.append(f"jobs_unfinished={self.unfinished}")
        lines.append(f"total_cost_gd={self.total_cost_gd:.0f}")
        lines.append(f"time_to_finish_min={self.time_to_finish_min:.2f}")
        lines.append(f"status={self.status.value}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["resource", "price", "jobs_executed", "spent_gd"])
        for r in self.rows:
            w.writerow([r.resource, f"{r.price:g}", r.jobs, f"{r.spent_gd:.0f}"])
        w.writerow(["total", "", self.completed, f"{self.total_cost_gd:.0f}"])
        return buf.getvalue()


def report(state: ScheduleState) -> Report:
    if not state.status.terminal:
        raise BrokerError("report requested before the experiment reached a terminal state")
    rows = tuple(
        ReportRow(name, led.desc.price, led.done, led.spent / MICRO) for name, led in state.resources.items()
    )
    finish = state.finish_time if state.finish_time is not None else state.clock
    return Report(
        rows,
        state.spent / MICRO,
        finish / 60.0,
        state.status,
        len(state.done),
        len(state.failed),
        len(state.jobs) - len(state.done) - len(state.failed),
    )
