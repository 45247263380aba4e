"""Local-process fabric: each resource is a directory-backed node running up to
``cpus`` jobs at once in worker threads; results funnel through one queue."""

from __future__ import annotations

import queue
import time
from concurrent.futures import Future, ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Mapping

from ..broker import ResourceDesc
from ..plan_lang import PlanFile, Value
from .agent import AgentError, ExecutionRecord, LocalNode


class LocalGrid:
    def __init__(
        self,
        resources: list[ResourceDesc],
        plan: PlanFile,
        bindings: Mapping[str, Mapping[str, Value]],
        base: Path,
        work: Path,
        home: Path | None = None,
        env: Mapping[str, str] | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.plan = plan
        self.bindings = bindings
        self.clock = clock
        self.completed: "queue.Queue[ExecutionRecord]" = queue.Queue()
        self.nodes = {
            r.name: LocalNode(r.name, Path(work) / "nodes" / r.name, Path(base), home, env=env) for r in resources
        }
        self.pools = {r.name: ThreadPoolExecutor(max_workers=r.cpus, thread_name_prefix=f"node-{r.name}") for r in resources}

    def deploy_all(self) -> dict[str, str]:
        """Deploy every node's agent; returns {resource: error} for the ones that failed."""
        errors = {}
        for name, node in self.nodes.items():
            try:
                node.deploy(self.plan)
            except (AgentError, OSError) as exc:
                errors[name] = str(exc)
        return errors

    def dispatch(self, job: str, resource: str) -> None:
        node = self.nodes[resource]
        start = self.clock()
        future = self.pools[resource].submit(node.run_job, self.plan, job, self.bindings[job], self.clock)

        def collect(f: Future) -> None:
            try:
                record = f.result()
            except Exception as exc:  # noqa: BLE001 - any agent crash is a failed attempt
                record = ExecutionRecord(job, resource, start, self.clock(), 0.0, "failed", (), f"agent error: {exc}")
            self.completed.put(record)

        future.add_done_callback(collect)

    def cancel(self, job: str, resource: str) -> None:
        self.nodes[resource].cancel(job)

    def shutdown(self) -> None:
        for pool in self.pools.values():
            pool.shutdown(wait=True)
