"""Command-line entry point: ``vlab <subcommand> ...``.

Exit codes: 0 ok, 1 usage, 2 runtime error, 3 the experiment ended
deadline-missed or budget-exhausted.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import cdb
from .broker import BrokerError, ExperimentConfig, Status, Strategy
from .experiment import ExperimentResult, run_local, run_simulated
from .fabric.testbed import InvalidTestbed, parse_testbed
from .fabric.trace import emit_trace
from .plan_lang import (
    PlanError,
    PlanFile,
    SelectionError,
    coerce_value,
    enumerate_values,
    parse_plan,
    validate_plan,
)
from .run_gen import DigestMismatch, RunFile, RunFileError, generate_jobs, read_run_file, write_run_file
from .workspace import scaffold

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CONSTRAINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise RuntimeFailure(f"cannot read {path}: {exc}") from None


def _write(path: str | Path, data: str | bytes) -> None:
    try:
        p = Path(path)
        p.write_bytes(data) if isinstance(data, bytes) else p.write_text(data)
    except OSError as exc:
        raise RuntimeFailure(f"cannot write {path}: {exc}") from None


# -- plan helpers ---------------------------------------------------------------


def load_plan(path: str) -> PlanFile:
    try:
        plan = parse_plan(_read_text(path), path)
    except PlanError as exc:
        raise RuntimeFailure(str(exc)) from None
    diags = validate_plan(plan)
    if diags:
        raise RuntimeFailure("\n".join(d.render(path) for d in diags))
    return plan


def parse_selections(plan: PlanFile, items: Sequence[str]) -> dict[str, list]:
    """``name=a..b`` (inclusive bounds) or ``name=v1,v2,...``; repeats merge."""
    out: dict[str, list] = {}
    for item in items:
        name, sep, spec = item.partition("=")
        if not sep or not name:
            raise UsageError(f"bad --select {item!r}: expected name=a..b or name=v1,v2")
        if name not in plan.names:
            raise SelectionError(f"selection for undeclared parameter: {name}")
        decl = plan.parameter(name)
        if ".." in spec:
            lo_text, _, hi_text = spec.partition("..")
            lo, hi = coerce_value(decl, lo_text), coerce_value(decl, hi_text)
            if not isinstance(lo, int):
                raise SelectionError(f"{name}: ranges need an integer parameter")
            domain = enumerate_values(decl)
            if lo < min(domain) or hi > max(domain):
                raise SelectionError(f"{name}: {spec} reaches outside {min(domain)}..{max(domain)}")
            values = [v for v in domain if lo <= v <= hi]
            if not values:
                raise SelectionError(f"{name}: {spec} selects nothing")
        else:
            values = [coerce_value(decl, v) for v in spec.split(",")]
        out.setdefault(name, []).extend(values)
    return out


def build_run(args, plan: PlanFile) -> RunFile:
    if getattr(args, "run_file", None):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DigestMismatch)
            run = read_run_file(_read_text(args.run_file), plan)
        for w in caught:
            _err(f"warning: {w.message}")
        return run
    return generate_jobs(plan, parse_selections(plan, args.select))


# -- subcommands ----------------------------------------------------------------


def cmd_index(args) -> int:
    index = cdb.index_file(args.db, Path(args.db).name)
    _write(args.idx, cdb.write_index(index))
    print(f"{args.idx}: {index.record_count} records")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        databases = cdb.read_server_config(_read_text(args.config), Path(args.config).resolve().parent)
    except ValueError as exc:
        raise RuntimeFailure(f"{args.config}: {exc}") from None
    server = cdb.serve(args.bind, databases, delay=args.delay)
    print(f"listening {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_fetch(args) -> int:
    path = cdb.fetch_to_file(args.endpoint, args.db, args.n, args.dir)
    print(path)
    return EXIT_OK


def cmd_stat(args) -> int:
    print(cdb.stat(args.endpoint, args.db))
    return EXIT_OK


def cmd_ping(args) -> int:
    print(f"{cdb.ping(args.endpoint) * 1000:.3f} ms")
    return EXIT_OK


def cmd_select(args) -> int:
    try:
        catalogue = cdb.ReplicaCatalogue.parse(_read_text(args.catalogue))
        if args.policy != "cost":
            cdb.probe(catalogue, args.db)
        print(cdb.select_replica(catalogue, args.db, args.policy, args.alpha))
    except (ValueError, cdb.ReplicaError) as exc:
        raise RuntimeFailure(str(exc)) from None
    return EXIT_OK


def cmd_check(args) -> int:
    plan = load_plan(args.plan)
    print(f"{args.plan}: ok, {len(plan.parameters)} parameters, {len(plan.tasks)} tasks")
    return EXIT_OK


def cmd_generate(args) -> int:
    plan = load_plan(args.plan)
    run = generate_jobs(plan, parse_selections(plan, args.select))
    text = write_run_file(run)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        _write(args.output, text)
        print(f"{args.output}: {len(run)} jobs")
    return EXIT_OK


def cmd_scaffold(args) -> int:
    plan = scaffold(Path(args.dir), records=args.records, seed=args.seed)
    print(plan)
    return EXIT_OK


def cmd_run(args) -> int:
    plan = load_plan(args.plan)
    try:
        resources = parse_testbed(_read_text(args.testbed))
    except InvalidTestbed as exc:
        raise RuntimeFailure(f"{args.testbed}: {exc}") from None
    if not resources:
        raise RuntimeFailure(f"{args.testbed}: no resources")
    run = build_run(args, plan)
    config = ExperimentConfig(
        deadline=args.deadline,
        budget=args.budget,
        strategy=Strategy(args.strategy),
        tick=args.tick if args.tick is not None else (10.0 if args.mode == "sim" else 1.0),
    )
    result: ExperimentResult
    if args.mode == "sim":
        result = run_simulated(run, resources, config, seed=args.seed, plan=plan)
    else:
        base = Path(args.plan).resolve().parent
        work = Path(args.work) if args.work else base / "work"
        home = Path(args.home) if args.home else None
        result = run_local(plan, run, [r.desc for r in resources], config, base, work, home)
        for line in result.log:
            _err(line)
    text = result.report.to_text()
    sys.stdout.write(text)
    if args.report:
        _write(args.report, text)
        _write(Path(args.report).with_suffix(".csv"), result.report.to_csv())
    if args.trace:
        _write(args.trace, emit_trace(result.trace))
    return EXIT_OK if result.report.status is Status.COMPLETED else EXIT_CONSTRAINT


# -- argument parsing -----------------------------------------------------------


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be non-negative")
    return value


def _molecule(text: str) -> int:
    if not text.isdigit() or int(text) < 1:
        raise argparse.ArgumentTypeError(f"{text!r} is not a molecule number")
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlab", description="Parameter-sweep docking experiments on a simulated or local grid.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="build the byte-offset index for a MOL2 database")
    p.add_argument("db")
    p.add_argument("idx")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("serve", help="serve indexed databases over TCP")
    p.add_argument("config", help="lines of '<name> <db-path> [<index-path>]'")
    p.add_argument("--bind", default="127.0.0.1:5001", help="host:port (port 0 picks a free one)")
    p.add_argument("--delay", type=_non_negative, default=0.0, help="artificial per-request delay in seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fetch", help="fetch molecule n into <n>.mol2")
    p.add_argument("endpoint")
    p.add_argument("db")
    p.add_argument("n", type=_molecule)
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("stat", help="print a database's record count")
    p.add_argument("endpoint")
    p.add_argument("db")
    p.set_defaults(func=cmd_stat)

    p = sub.add_parser("ping", help="round-trip time to a server")
    p.add_argument("endpoint")
    p.set_defaults(func=cmd_ping)

    p = sub.add_parser("select", help="pick a replica of a database from a catalogue")
    p.add_argument("catalogue", help="lines of '<db> host:port [cost=X]'")
    p.add_argument("db")
    p.add_argument("--policy", choices=("latency", "cost", "weighted"), default="latency")
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("check", help="parse and validate a plan")
    p.add_argument("plan")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("generate", help="expand a plan into a run file")
    p.add_argument("plan")
    p.add_argument("--select", action="append", default=[], metavar="NAME=A..B|V1,V2")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("scaffold", help="create a runnable docking experiment directory")
    p.add_argument("dir")
    p.add_argument("--records", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_scaffold)

    p = sub.add_parser("run", help="run an experiment under a deadline and budget")
    p.add_argument("plan")
    p.add_argument("testbed")
    p.add_argument("--deadline", type=_positive, required=True, help="seconds")
    p.add_argument("--budget", type=_positive, required=True, help="G$")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("sim", "local"), default="sim")
    p.add_argument("--tick", type=_positive, default=None, help="scheduling interval (default 10 sim, 1 local)")
    p.add_argument("--select", action="append", default=[], metavar="NAME=A..B|V1,V2")
    p.add_argument("--run", dest="run_file", help="use this run file instead of generating jobs")
    p.add_argument("--trace", help="write the per-tick trace CSV here")
    p.add_argument("--report", help="write the report text here (and a .csv beside it)")
    p.add_argument("--work", help="local mode: node and job directories (default <plan dir>/work)")
    p.add_argument("--home", help="local mode: what $HOME expands to on nodes")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (RuntimeFailure, SelectionError, RunFileError, BrokerError, cdb.CdbIndexError, cdb.CdbError) as exc:
        _err(f"vlab: {exc}")
        return EXIT_RUNTIME
    except cdb.RecordOutOfRange as exc:
        _err(f"vlab: {exc}")
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        _err(f"vlab: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
