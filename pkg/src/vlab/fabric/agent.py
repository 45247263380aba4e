"""Node agents: stage nodestart files once per node, then run main tasks per job."""

from __future__ import annotations

import os
import platform
import shlex
import shutil
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from ..plan_lang import Copy, Execute, PlanFile, Substitute, SubstitutionError, Value, enumerate_values, substitute

__all__ = [
    "AgentError",
    "AgentState",
    "ExecutionRecord",
    "LocalNode",
    "default_os",
    "job_bindings",
    "result_names",
    "staged_names",
]


class AgentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecutionRecord:
    job: str
    resource: str
    start: float
    end: float
    cpu_seconds: float
    outcome: str  # "ok" or "failed"
    outputs: tuple[str, ...] = ()
    reason: str = ""


@dataclass
class AgentState:
    resource: str
    nodestart_done: bool = False
    staged_files: set[str] = field(default_factory=set)
    deployments: int = 0


def default_os() -> str:
    return platform.system().lower() or "unknown"


def _staged_name(cmd: Copy) -> str:
    if cmd.dst in (".", "./") or cmd.dst.endswith("/"):
        return os.path.basename(cmd.src.rstrip("/"))
    return cmd.dst


def staged_names(plan: PlanFile | None) -> set[str]:
    """Files the nodestart task leaves on a node."""
    task = plan.task("nodestart") if plan is not None else None
    if task is None:
        return set()
    return {_staged_name(c) for c in task.commands if isinstance(c, Copy) and c.to_node}


def job_bindings(bindings: Mapping[str, Value], jobname: str, home: str, os_name: str) -> dict[str, Value]:
    merged = dict(bindings)
    merged.update(HOME=home, OS=os_name, jobname=jobname)
    return merged


def result_names(plan: PlanFile | None, jobname: str, bindings: Mapping[str, Value]) -> list[str]:
    """Home-side paths the main task copies results back to."""
    task = plan.task("main") if plan is not None else None
    if task is None:
        return []
    env = job_bindings(bindings, jobname, "$HOME", "$OS")
    names = []
    for cmd in task.commands:
        if isinstance(cmd, Copy) and not cmd.to_node:
            try:
                names.append(os.path.basename(substitute(cmd.dst, env)))
            except SubstitutionError:
                names.append(os.path.basename(cmd.dst))
    return names


_WRAPPERS = {
    "dock": "vlab.fabric.kernel",
    "mmclient": "vlab.cdb.mmclient",
}


class LocalNode:
    """A directory standing in for one grid node, with ``cpus`` concurrent job slots.

    ``base`` is the home-node directory that plan-relative paths (``./results``)
    resolve against. ``home`` is what ``$HOME`` expands to for jobs; missing
    ``bin/dock.<os>`` / ``bin/mmclient.<os>`` are provisioned as wrappers around
    the mock kernel and the CDB fetch client.
    """

    def __init__(self, name: str, root: Path, base: Path, home: Path | None = None, os_name: str | None = None,
                 env: Mapping[str, str] | None = None):
        self.name = name
        self.root = Path(root)
        self.base = Path(base)
        self.home = Path(home) if home is not None else self.root / "home"
        self.os_name = os_name or default_os()
        self.env = dict(os.environ if env is None else env)
        self.agent = AgentState(name)
        self._lock = threading.Lock()
        self._procs: dict[str, subprocess.Popen] = {}
        self._cancelled: set[str] = set()

    # -- deployment ------------------------------------------------------------

    def provision_home(self) -> None:
        bin_dir = self.home / "bin"
        bin_dir.mkdir(parents=True, exist_ok=True)
        for tool, module in _WRAPPERS.items():
            path = bin_dir / f"{tool}.{self.os_name}"
            if path.exists():
                continue
            path.write_text(f'#!/bin/sh\nexec "{sys.executable}" -m {module} "$@"\n')
            path.chmod(0o755)

    def deploy(self, plan: PlanFile, bindings: Mapping[str, Value] | None = None) -> AgentState:
        """Run the nodestart task exactly once for this node.

        Placemakers in nodestart paths take values from ``bindings`` (default:
        each parameter's first enumerated value).
        """
        with self._lock:
            if self.agent.nodestart_done:
                return self.agent
            self.provision_home()
            node_dir = self.root / "node"
            node_dir.mkdir(parents=True, exist_ok=True)
            task = plan.task("nodestart")
            if bindings is None:
                bindings = {d.name: enumerate_values(d)[0] for d in plan.parameters}
            env = job_bindings(bindings, "", str(self.home), self.os_name)
            if task is not None:
                for cmd in task.commands:
                    if not isinstance(cmd, Copy) or not cmd.to_node:
                        raise AgentError(f"{self.name}: nodestart supports only copies to the node")
                    src = self.base / substitute(cmd.src, env)
                    dst = node_dir / substitute(cmd.dst, env)
                    if dst.is_dir():
                        dst = dst / src.name
                    try:
                        shutil.copyfile(src, dst)
                    except OSError as exc:
                        raise AgentError(f"{self.name}: nodestart copy of {src} failed: {exc}") from exc
                    self.agent.staged_files.add(dst.name)
            self.agent.nodestart_done = True
            self.agent.deployments += 1
            return self.agent

    # -- jobs --------------------------------------------------------------------

    def cancel(self, jobname: str) -> None:
        with self._lock:
            self._cancelled.add(jobname)
            proc = self._procs.get(jobname)
        if proc is not None and proc.poll() is None:
            proc.kill()

    def run_job(self, plan: PlanFile, jobname: str, bindings: Mapping[str, Value],
                clock: Callable[[], float] = time.monotonic) -> ExecutionRecord:
        """Execute the main task for one job in its own scratch directory on the node."""
        if not self.agent.nodestart_done:
            raise AgentError(f"{self.name}: agent not deployed")
        with self._lock:
            self._cancelled.discard(jobname)
        start = clock()
        busy = 0.0  # CPU-seconds of the job's child processes
        job_dir = self.root / "jobs" / jobname
        if job_dir.exists():
            shutil.rmtree(job_dir)
        job_dir.mkdir(parents=True)
        node_dir = self.root / "node"
        for name in self.agent.staged_files:
            shutil.copyfile(node_dir / name, job_dir / name)
        env = job_bindings(bindings, jobname, str(self.home), self.os_name)
        proc_env = dict(self.env, HOME=str(self.home))
        outputs: list[str] = []

        def failed(reason: str) -> ExecutionRecord:
            return ExecutionRecord(jobname, self.name, start, clock(), busy, "failed", (), reason)

        task = plan.task("main")
        for cmd in task.commands if task is not None else ():
            if jobname in self._cancelled:
                return failed("killed")
            try:
                if isinstance(cmd, Substitute):
                    text = (job_dir / substitute(cmd.input, env)).read_text()
                    (job_dir / substitute(cmd.output, env)).write_text(substitute(text, env))
                elif isinstance(cmd, Copy):
                    if cmd.to_node:
                        src, dst = self.base / substitute(cmd.src, env), job_dir / substitute(cmd.dst, env)
                    else:
                        src, dst = job_dir / substitute(cmd.src, env), self.base / substitute(cmd.dst, env)
                    if dst.is_dir():
                        dst = dst / src.name
                    dst.parent.mkdir(parents=True, exist_ok=True)
                    shutil.copyfile(src, dst)
                    if not cmd.to_node:
                        outputs.append(dst.name)
                elif isinstance(cmd, Execute):
                    argv = shlex.split(substitute(cmd.argv, env))
                    code, cpu = self._execute(jobname, argv, job_dir, proc_env)
                    busy += cpu
                    if code != 0:
                        return failed("killed" if jobname in self._cancelled else f"{argv[0]} exited {code}")
            except (OSError, SubstitutionError, ValueError) as exc:
                return failed(str(exc))
        return ExecutionRecord(jobname, self.name, start, clock(), busy, "ok", tuple(outputs))

    def _execute(self, jobname: str, argv: list[str], cwd: Path, env: dict[str, str]) -> tuple[int, float]:
        """Run one command; returns its exit code and the CPU-seconds it consumed."""
        with self._lock:
            if jobname in self._cancelled:
                return -9, 0.0
            proc = subprocess.Popen(argv, cwd=cwd, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
            self._procs[jobname] = proc
        try:
            err = proc.stderr.read()
            proc.stderr.close()
            # reap it ourselves to read the child's own rusage
            _, status, usage = os.wait4(proc.pid, 0)
        finally:
            with self._lock:
                self._procs.pop(jobname, None)
        proc.returncode = os.waitstatus_to_exitcode(status)
        if proc.returncode != 0 and err:
            sys.stderr.write(f"[{self.name}/{jobname}] {err.decode(errors='replace')}")
        return proc.returncode, usage.ru_utime + usage.ru_stime
