"""Per-tick, per-resource progress rows for plotting job and spend curves."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

from ..broker import MICRO, ScheduleState

HEADER = ("t_sec", "resource", "jobs_done", "jobs_running", "spent_gd")


@dataclass(frozen=True)
class TraceRow:
    t_sec: float
    resource: str
    jobs_done: int
    jobs_running: int
    spent_gd: float


def snapshot(state: ScheduleState) -> list[TraceRow]:
    return [
        TraceRow(state.clock, name, led.done, len(led.running), led.spent / MICRO)
        for name, led in state.resources.items()
    ]


def emit_trace(rows: Iterable[TraceRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in rows:
        writer.writerow([f"{r.t_sec:.3f}", r.resource, r.jobs_done, r.jobs_running, f"{r.spent_gd:.2f}"])
    return buf.getvalue()


def read_trace(text: str) -> list[TraceRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise ValueError("not a trace file")
    return [TraceRow(float(t), res, int(d), int(r), float(s)) for t, res, d, r, s in reader]
