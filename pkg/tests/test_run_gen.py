from __future__ import annotations

import itertools
import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vlab.plan_lang import (
    IntegerRange,
    ParameterDecl,
    PlanFile,
    SelectionError,
    TaskScript,
    TextSelectOneOf,
    parse_plan,
)
from vlab.run_gen import (
    DigestMismatch,
    JobSpec,
    RunFile,
    RunFileError,
    generate_jobs,
    read_run_file,
    write_run_file,
)

MAIN = (TaskScript("main", ()),)


def _plan(*domains) -> PlanFile:
    return PlanFile(tuple(ParameterDecl(f"p{i}", d) for i, d in enumerate(domains)), MAIN)


def test_default_sweep_has_2000_jobs(docking_plan):
    run = generate_jobs(docking_plan)
    assert len(run) == 2000
    assert run.jobs[0].jobname == "j0001"
    assert run.jobs[4].bindings["ligand_number"] == 5
    assert run.jobs[4].jobname == "j0005"
    assert {j.bindings["database_name"] for j in run.jobs} == {"aldrich_300"}


def test_trial_screen_has_200_jobs(docking_plan):
    run = generate_jobs(docking_plan, {"ligand_number": range(1, 201)})
    assert len(run) == 200
    assert run.jobs[-1].jobname == "j200"


def test_three_by_four():
    plan = _plan(TextSelectOneOf(("a", "b", "c")), IntegerRange(1, 4))
    run = generate_jobs(plan, {"p0": ["a", "b", "c"]})
    assert len(run) == 12
    assert [tuple(j.bindings.values()) for j in run.jobs][:5] == [("a", 1), ("a", 2), ("a", 3), ("a", 4), ("b", 1)]
    assert [j.jobname for j in run.jobs][:3] == ["j01", "j02", "j03"]


def test_selection_errors(docking_plan):
    with pytest.raises(SelectionError):
        generate_jobs(docking_plan, {"ligand_number": []})
    with pytest.raises(SelectionError):
        generate_jobs(docking_plan, {"nope": [1]})
    with pytest.raises(SelectionError):
        generate_jobs(docking_plan, job_cap=1999)


def test_single_valued_parameters_do_not_change_count(docking_plan):
    base = len(generate_jobs(docking_plan, {"ligand_number": range(1, 11)}))
    overridden = generate_jobs(docking_plan, {"ligand_number": range(1, 11), "random_seed": [99], "score_ligand": ["no"]})
    assert len(overridden) == base


def test_empty_run_file_round_trip():
    run = RunFile("ab" * 32, ())
    text = write_run_file(run)
    assert text == f"RUNFILE 1 0 {'ab' * 32}\n"
    assert read_run_file(text) == run


def test_2000_job_round_trip(docking_plan):
    run = generate_jobs(docking_plan)
    back = read_run_file(write_run_file(run), docking_plan)
    assert len(back) == 2000
    assert back == run


def test_tampered_digest_warns_but_returns_jobs(docking_plan):
    run = generate_jobs(docking_plan, {"ligand_number": range(1, 4)})
    text = write_run_file(run)
    tampered = text.replace(run.plan_digest, "0" * 64, 1)
    with pytest.warns(DigestMismatch):
        back = read_run_file(tampered, docking_plan)
    assert back.jobs == run.jobs


def test_matching_digest_is_silent(docking_plan):
    text = write_run_file(generate_jobs(docking_plan, {"ligand_number": [1]}))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        read_run_file(text, docking_plan)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "RUNFILE 2 0 ab\n",
        "RUNFILE 1 x ab\n",
        "RUNFILE 1 1 ab\nj1\ta=1\nj1\ta=2\n",
        "RUNFILE 1 1 ab\nj1\tnoequals\n",
        "RUNFILE 1 2 ab\nj1\ta=1\n",
        "NOTRUN 1 0 ab\n",
    ],
)
def test_malformed_run_files(text):
    with pytest.raises(RunFileError):
        read_run_file(text)


def test_awkward_values_survive():
    plan = PlanFile((ParameterDecl("s", TextSelectOneOf(("a\tb", "50%", "x=y", "é"))),), MAIN)
    run = generate_jobs(plan, {"s": ["a\tb", "50%", "x=y", "é"]})
    text = write_run_file(run)
    assert all(len(line.split("\t")) == 2 for line in text.splitlines()[1:])
    assert read_run_file(text, plan) == run


def test_generation_is_deterministic(docking_source):
    a = write_run_file(generate_jobs(parse_plan(docking_source), {"ligand_number": range(1, 51)}))
    b = write_run_file(generate_jobs(parse_plan(docking_source), {"ligand_number": range(1, 51)}))
    assert a == b


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_cross_product_law(sizes, data):
    domains = [IntegerRange(0, 9)] * len(sizes)
    selections = {
        f"p{i}": data.draw(st.lists(st.integers(0, 9), min_size=n, max_size=n, unique=True))
        for i, n in enumerate(sizes)
    }
    run = generate_jobs(_plan(*domains), selections)
    assert len(run) == math.prod(sizes)
    combos = [tuple(j.bindings.values()) for j in run.jobs]
    assert len(set(combos)) == len(combos)
    assert combos == list(itertools.product(*(sorted(selections[f"p{i}"]) for i in range(len(sizes)))))
    assert len({j.jobname for j in run.jobs}) == len(run)
    assert all(set(j.bindings) == set(selections) for j in run.jobs)


@given(st.lists(st.lists(st.from_regex(r"[ -~\t]{0,6}", fullmatch=True), min_size=1, max_size=3), max_size=5))
def test_write_read_identity(rows):
    jobs = tuple(JobSpec(f"j{i}", {f"k{n}": v for n, v in enumerate(row)}) for i, row in enumerate(rows))
    run = RunFile("f" * 64, jobs)
    assert read_run_file(write_run_file(run)) == run
