"""Acceptance criteria 1-14 at their stated tolerances.

Criteria 1-13 run in-process and share one context so that expensive
minimizers are computed once.  Criterion 14 runs the command-line
``verify`` end to end in a fresh interpreter.  Every criterion prints one
PASS/FAIL line.
"""

import json
import subprocess
import sys
import time

import pytest

from fbhomog.acceptance import CRITERIA, TIME_BUDGET, AcceptanceContext, summary_criterion

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def ctx():
    return AcceptanceContext(seed=0)


def _report(capsys, line):
    with capsys.disabled():
        print(f"\n{line}")


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, ctx, capsys):
    t0 = time.time()
    res = CRITERIA[number](ctx)
    res.elapsed = time.time() - t0
    _report(capsys, res.line())
    assert res.passed, json.dumps(res.to_dict()["metrics"], default=str)[:2000]


def test_criterion_14_end_to_end(tmp_path, capsys):
    t0 = time.time()
    proc = subprocess.run([sys.executable, "-m", "fbhomog", "verify", "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=TIME_BUDGET + 60)
    elapsed = time.time() - t0
    report = json.loads((tmp_path / "report.json").read_text())
    failed = [v["name"] for v in report["verdicts"] if not v["passed"]]
    res = summary_criterion([], elapsed)
    res.passed = proc.returncode == 0 and elapsed <= TIME_BUDGET and not failed
    res.metrics.update({"exit_code": proc.returncode, "failed": failed})
    _report(capsys, res.line())
    assert res.passed, proc.stdout[-2000:] + proc.stderr[-2000:]
