"""Replica catalogue and best-replica selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .client import ping as _ping
from .protocol import CdbError, NAME_RE, parse_endpoint

POLICIES = ("latency", "cost", "weighted")


class ReplicaError(LookupError):
    pass


@dataclass
class ReplicaInfo:
    endpoint: str
    cost: float | None = None
    latency: float | None = None


@dataclass
class ReplicaCatalogue:
    replicas: dict[str, list[ReplicaInfo]] = field(default_factory=dict)

    def register(self, database: str, endpoint: str, cost: float | None = None) -> ReplicaInfo:
        parse_endpoint(endpoint)
        entries = self.replicas.setdefault(database, [])
        if any(r.endpoint == endpoint for r in entries):
            raise ValueError(f"{endpoint} already registered for {database}")
        info = ReplicaInfo(endpoint, cost)
        entries.append(info)
        return info

    def __getitem__(self, database: str) -> list[ReplicaInfo]:
        return self.replicas.get(database, [])

    @classmethod
    def parse(cls, text: str) -> "ReplicaCatalogue":
        """Read ``<database-name> <host>:<port> [cost=<G$>]`` lines."""
        cat = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3) or not NAME_RE.match(parts[0]):
                raise ValueError(f"line {lineno}: expected '<database> <host>:<port> [cost=<G$>]'")
            cost = None
            if len(parts) == 3:
                key, _, value = parts[2].partition("=")
                if key != "cost":
                    raise ValueError(f"line {lineno}: unknown field {parts[2]!r}")
                try:
                    cost = float(value)
                except ValueError:
                    raise ValueError(f"line {lineno}: bad cost {value!r}") from None
            try:
                cat.register(parts[0], parts[1], cost)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return cat

    def format(self) -> str:
        lines = []
        for db, entries in self.replicas.items():
            for r in entries:
                lines.append(f"{db} {r.endpoint}" + (f" cost={r.cost:g}" if r.cost is not None else ""))
        return "\n".join(lines) + ("\n" if lines else "")


def probe(catalogue: ReplicaCatalogue, database: str, ping: Callable[[str], float] = _ping) -> dict[str, float | None]:
    """Ping every replica of ``database`` once; unreachable ones get no latency."""
    results = {}
    for info in catalogue[database]:
        try:
            info.latency = ping(info.endpoint)
        except CdbError:
            info.latency = None
        results[info.endpoint] = info.latency
    return results


def _normalized(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def select_replica(catalogue: ReplicaCatalogue, database: str, policy: str = "latency", alpha: float = 0.5) -> str:
    """Pick the endpoint to fetch ``database`` from.

    ``latency`` and ``cost`` take the argmin of the last probe or declared
    cost; ``weighted`` minimises ``alpha*latency + (1-alpha)*cost`` after
    min-max normalising both across the candidates. Ties go to the
    lexicographically smallest endpoint.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}")
    candidates = sorted(catalogue[database], key=lambda r: r.endpoint)
    if not candidates:
        raise ReplicaError(f"no replica registered for {database}")
    if len(candidates) == 1:
        return candidates[0].endpoint
    if policy == "weighted" and not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")

    need_latency = policy == "latency" or (policy == "weighted" and alpha > 0)
    need_cost = policy == "cost" or (policy == "weighted" and alpha < 1)
    if need_latency and any(r.latency is None for r in candidates):
        raise ReplicaError(f"{database}: probe data missing; ping the replicas first")
    if need_cost and any(r.cost is None for r in candidates):
        raise ReplicaError(f"{database}: declared cost missing for some replicas")

    if policy == "latency":
        scores = [r.latency for r in candidates]
    elif policy == "cost":
        scores = [r.cost for r in candidates]
    else:
        zeros = [0.0] * len(candidates)
        lat = _normalized([r.latency for r in candidates]) if need_latency else zeros
        cost = _normalized([r.cost for r in candidates]) if need_cost else zeros
        scores = [alpha * a + (1 - alpha) * b for a, b in zip(lat, cost)]
    best = min(range(len(candidates)), key=lambda i: (scores[i], candidates[i].endpoint))
    return candidates[best].endpoint
