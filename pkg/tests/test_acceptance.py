"""Acceptance suite: runs ``artifact acceptance`` twice and checks every criterion.

One PASS/FAIL line per criterion is printed and repeated in the pytest
terminal summary.
"""

import json
import subprocess
import sys

import pytest

from artifact.acceptance import BUDGETS

pytestmark = pytest.mark.slow


def report(log, k, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {name}{' ' + detail if detail else ''}"
    log.append(line)
    print(line)


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    out = []
    for tag in ("first", "second"):
        d = tmp_path_factory.mktemp(f"acceptance_{tag}")
        proc = subprocess.run([sys.executable, "-m", "artifact", "acceptance", "--seed", "0", "--out", str(d)],
                              capture_output=True, text=True, timeout=3600)
        assert proc.returncode in (0, 2), proc.stderr
        out.append((d, proc.returncode))
    return out


@pytest.fixture(scope="session")
def results(runs):
    d = runs[0][0]
    with open(d / "results.json") as fh:
        res = json.load(fh)
    with open(d / "timings.json") as fh:
        tim = json.load(fh)
    return res, tim


@pytest.mark.parametrize("k", sorted(BUDGETS))
def test_criterion(results, acceptance_log, k):
    res, tim = results
    crit = res["criteria"][str(k)]
    secs = tim[str(k)]["seconds"]
    within = secs < BUDGETS[k]
    report(acceptance_log, k, crit["name"], crit["passed"] and within, f"({secs:.1f} s, budget {BUDGETS[k]} s)")
    assert crit["passed"], json.dumps(crit, indent=1)[:4000]
    assert within, f"criterion {k} took {secs:.1f} s, budget {BUDGETS[k]} s"


def test_exit_code_reflects_results(runs, results):
    res, _ = results
    assert runs[0][1] == (0 if res["passed"] else 2)


def test_criterion_10_determinism(runs, acceptance_log):
    (a, _), (b, _) = runs
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("results.json", "estimates.csv"))
    report(acceptance_log, 10, "Determinism", same, "(results.json, estimates.csv byte-identical)")
    assert same
