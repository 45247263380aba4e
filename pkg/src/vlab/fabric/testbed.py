"""Simulated resources and the testbed file that describes them.

One resource per line::

    name cpus price model(args) [avail=from-to,...] [fetch=<s>] [fail=<p>] seed=<n>

``model`` is ``fixed(t)``, ``uniform(lo,hi)`` or ``lognormal(mu,sigma)`` and
gives per-job service time in CPU-seconds. ``avail`` lists the virtual-time
windows when the CPUs are usable (``inf`` allowed as an end); the default is
always available. ``fetch`` adds a per-job molecule-fetch wait that takes
wall time but no CPU, and ``fail`` is a per-attempt failure probability.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

from ..broker import ResourceDesc

ALWAYS = ((0.0, math.inf),)

_MODEL_RE = re.compile(r"(fixed|uniform|lognormal)\(([^)]*)\)\Z")
_ARITY = {"fixed": 1, "uniform": 2, "lognormal": 2}


class InvalidTestbed(ValueError):
    pass


@dataclass(frozen=True)
class ServiceModel:
    kind: str
    args: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise InvalidTestbed(f"unknown service model {self.kind!r}")
        if len(self.args) != _ARITY[self.kind]:
            raise InvalidTestbed(f"{self.kind} takes {_ARITY[self.kind]} argument(s)")
        if not all(math.isfinite(a) for a in self.args):
            raise InvalidTestbed(f"{self}: arguments must be finite")
        if self.kind == "fixed" and self.args[0] <= 0:
            raise InvalidTestbed("fixed service time must be positive")
        if self.kind == "uniform" and not 0 < self.args[0] <= self.args[1]:
            raise InvalidTestbed("uniform needs 0 < lo <= hi")
        if self.kind == "lognormal" and self.args[1] < 0:
            raise InvalidTestbed("lognormal sigma must be non-negative")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.args[0]
        if self.kind == "uniform":
            return rng.uniform(*self.args)
        return max(rng.lognormvariate(*self.args), 1e-6)

    def __str__(self) -> str:
        return f"{self.kind}({','.join(f'{a:g}' for a in self.args)})"

    @classmethod
    def parse(cls, text: str) -> "ServiceModel":
        m = _MODEL_RE.match(text)
        if not m:
            raise InvalidTestbed(f"bad service model {text!r}")
        try:
            args = tuple(float(a) for a in m.group(2).split(","))
        except ValueError:
            raise InvalidTestbed(f"bad service model arguments in {text!r}") from None
        return cls(m.group(1), args)


def fixed(t: float) -> ServiceModel:
    return ServiceModel("fixed", (float(t),))


@dataclass(frozen=True)
class SimResource:
    desc: ResourceDesc
    model: ServiceModel
    seed: int = 0
    availability: tuple[tuple[float, float], ...] = ALWAYS
    fetch_latency: float = 0.0
    fail_prob: float = 0.0

    def __post_init__(self):
        windows = tuple((float(a), float(b)) for a, b in self.availability)
        for a, b in windows:
            if not (a < b) or a < 0:
                raise InvalidTestbed(f"{self.name}: bad availability window {a:g}-{b:g}")
        for (_, b), (c, _) in zip(windows, windows[1:]):
            if c < b:
                raise InvalidTestbed(f"{self.name}: availability windows must be ordered and disjoint")
        object.__setattr__(self, "availability", windows)
        if self.fetch_latency < 0:
            raise InvalidTestbed(f"{self.name}: fetch latency must be non-negative")
        if not 0 <= self.fail_prob < 1:
            raise InvalidTestbed(f"{self.name}: fail probability must lie in [0, 1)")

    @property
    def name(self) -> str:
        return self.desc.name

    @property
    def cpus(self) -> int:
        return self.desc.cpus

    @property
    def price(self) -> float:
        return self.desc.price


def _float(text: str) -> float:
    return math.inf if text in ("inf", "Inf", "INF") else float(text)


def parse_testbed(text: str) -> list[SimResource]:
    resources = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) < 4:
                raise InvalidTestbed("expected 'name cpus price model(args) ... seed=<n>'")
            name, cpus, price, model = parts[:4]
            if name in seen:
                raise InvalidTestbed(f"duplicate resource {name!r}")
            seen.add(name)
            opts = {}
            for item in parts[4:]:
                key, sep, value = item.partition("=")
                if not sep or key not in ("avail", "seed", "fetch", "fail") or key in opts:
                    raise InvalidTestbed(f"unexpected field {item!r}")
                opts[key] = value
            if "seed" not in opts:
                raise InvalidTestbed("missing seed=<n>")
            windows = ALWAYS
            if "avail" in opts:
                windows = []
                for span in opts["avail"].split(","):
                    lo, sep, hi = span.partition("-")
                    if not sep:
                        raise InvalidTestbed(f"bad availability window {span!r}")
                    windows.append((_float(lo), _float(hi)))
            desc = ResourceDesc(name, int(cpus), float(price))
            resources.append(
                SimResource(
                    desc,
                    ServiceModel.parse(model),
                    int(opts["seed"]),
                    tuple(windows),
                    float(opts.get("fetch", 0.0)),
                    float(opts.get("fail", 0.0)),
                )
            )
        except (InvalidTestbed, ValueError) as exc:
            raise InvalidTestbed(f"line {lineno}: {exc}") from None
    return resources


def format_testbed(resources: list[SimResource]) -> str:
    lines = []
    for r in resources:
        parts = [r.name, str(r.cpus), f"{r.price:g}", str(r.model)]
        if r.availability != ALWAYS:
            parts.append("avail=" + ",".join(f"{a:g}-{b:g}" for a, b in r.availability))
        if r.fetch_latency:
            parts.append(f"fetch={r.fetch_latency:g}")
        if r.fail_prob:
            parts.append(f"fail={r.fail_prob:g}")
        parts.append(f"seed={r.seed}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


@dataclass
class Availability:
    """Piecewise-constant usable/unusable timeline."""

    windows: tuple[tuple[float, float], ...] = ALWAYS
    boundaries: list[tuple[float, bool]] = field(init=False)

    def __post_init__(self):
        edges = []
        for a, b in self.windows:
            if a > 0:
                edges.append((a, True))
            if math.isfinite(b):
                edges.append((b, False))
        self.boundaries = edges

    def is_up(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.windows)

    def usable_between(self, t0: float, t1: float) -> float:
        total = 0.0
        for a, b in self.windows:
            lo, hi = max(a, t0), min(b, t1)
            if hi > lo:
                total += hi - lo
        return total

    def advance(self, t0: float, work: float) -> float:
        """Earliest time by which ``work`` seconds of usable time have elapsed from ``t0``."""
        if work <= 0:
            return t0
        remaining = work
        for a, b in self.windows:
            if b <= t0:
                continue
            lo = max(a, t0)
            span = b - lo
            if span >= remaining:
                return lo + remaining
            remaining -= span
        return math.inf
