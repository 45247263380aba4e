"""Expand a plan into its concrete job list (the run file)."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Mapping
from urllib.parse import quote, unquote

from .plan_lang import (
    FloatDefault,
    IntegerDefault,
    IntegerRange,
    PlanFile,
    SelectionError,
    Value,
    enumerate_values,
    render_value,
)

DEFAULT_JOB_CAP = 10**7
MAGIC = "RUNFILE"
VERSION = 1


@dataclass(frozen=True)
class JobSpec:
    jobname: str
    bindings: dict[str, Value]


@dataclass(frozen=True)
class RunFile:
    plan_digest: str
    jobs: tuple[JobSpec, ...]

    def __len__(self) -> int:
        return len(self.jobs)


class RunFileError(ValueError):
    pass


class DigestMismatch(UserWarning):
    pass


def generate_jobs(
    plan: PlanFile,
    selections: Mapping[str, Iterable[Value]] | None = None,
    job_cap: int = DEFAULT_JOB_CAP,
) -> RunFile:
    """Cross product of the selected parameter values, last parameter varying fastest."""
    selections = dict(selections or {})
    unknown = sorted(set(selections) - set(plan.names))
    if unknown:
        raise SelectionError(f"selection for undeclared parameter(s): {', '.join(unknown)}")
    axes = []
    for decl in plan.parameters:
        values = enumerate_values(decl, selections.get(decl.name))
        if not values:
            raise SelectionError(f"{decl.name}: empty selection")
        axes.append(values)
    total = math.prod(len(a) for a in axes)
    if total > job_cap:
        raise SelectionError(f"{total} jobs exceeds the job cap of {job_cap}")
    width = len(str(total))
    names = plan.names
    jobs = tuple(
        JobSpec(f"j{i:0{width}d}", dict(zip(names, combo)))
        for i, combo in enumerate(itertools.product(*axes), start=1)
    )
    return RunFile(plan.digest, jobs)


def _encode(text: str) -> str:
    return quote(text, safe="".join(chr(c) for c in range(32, 127) if chr(c) != "%"))


def write_run_file(run: RunFile) -> str:
    lines = [f"{MAGIC} {VERSION} {len(run.jobs)} {run.plan_digest}"]
    for job in run.jobs:
        fields = [job.jobname] + [f"{k}={_encode(render_value(v))}" for k, v in job.bindings.items()]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def _typed(decl_domain, text: str) -> Value:
    if isinstance(decl_domain, (IntegerDefault, IntegerRange)):
        return int(text)
    if isinstance(decl_domain, FloatDefault):
        return Decimal(text)
    return text


def read_run_file(text: str, plan: PlanFile | None = None) -> RunFile:
    """Parse run-file text.

    Values are returned as text unless ``plan`` is given, in which case they
    are typed by the plan's declarations and the digest is checked (a mismatch
    only warns).
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise RunFileError("line 1: missing header")
    header = lines[0].split(" ")
    if len(header) != 4 or header[0] != MAGIC:
        raise RunFileError("line 1: malformed header")
    if header[1] != str(VERSION):
        raise RunFileError(f"line 1: unsupported run file version {header[1]}")
    try:
        count = int(header[2])
    except ValueError:
        raise RunFileError("line 1: bad job count") from None
    digest = header[3]
    if plan is not None and plan.digest != digest:
        warnings.warn(f"run file digest {digest[:12]}... does not match plan {plan.digest[:12]}...", DigestMismatch, stacklevel=2)
    domains = {d.name: d.domain for d in plan.parameters} if plan is not None else {}

    jobs = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        name = fields[0]
        if not name:
            raise RunFileError(f"line {lineno}: missing jobname")
        if name in seen:
            raise RunFileError(f"line {lineno}: duplicate jobname {name!r}")
        seen.add(name)
        bindings: dict[str, Value] = {}
        for field in fields[1:]:
            key, sep, raw = field.partition("=")
            if not sep or not key:
                raise RunFileError(f"line {lineno}: malformed binding {field!r}")
            value = unquote(raw)
            try:
                bindings[key] = _typed(domains[key], value) if key in domains else value
            except (ValueError, ArithmeticError):
                raise RunFileError(f"line {lineno}: bad value for {key}: {value!r}") from None
        jobs.append(JobSpec(name, bindings))
    if len(jobs) != count:
        raise RunFileError(f"header declares {count} jobs but {len(jobs)} were found")
    return RunFile(digest, tuple(jobs))
