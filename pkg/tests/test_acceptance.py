"""End-to-end acceptance checks, one test per criterion at full resolution.

Each test prints a single ``[PASS]`` or ``[FAIL]`` line; the lines are
repeated in the terminal summary.
"""
import pytest

from kslab.validate import CRITERIA, format_line, run_criterion

ACCEPTANCE_LINES = []


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"C{c.number:02d}-{c.func.__name__[6:]}" for c in CRITERIA])
def test_criterion(criterion):
    res = run_criterion(criterion, quick=False)
    line = format_line(criterion, res)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line
