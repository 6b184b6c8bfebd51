"""Acceptance criteria at their stated tolerances and runtime limits.

Each test runs one criterion, prints its PASS/FAIL line and asserts the
verdict. The lines are repeated in the terminal summary.
"""
import pytest

from nuisreg import acceptance as acc

from conftest import ACCEPTANCE_RESULTS


@pytest.mark.slow
@pytest.mark.parametrize("check", acc.CHECKS, ids=lambda f: f.__name__.removeprefix("check_"))
def test_criterion(check, capsys):
    res = check()
    ACCEPTANCE_RESULTS.append(res)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
