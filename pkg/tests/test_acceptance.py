"""Acceptance criteria at their stated tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line. Run standalone with
``python tests/test_acceptance.py`` or ``relloc verify``.
"""

import sys

import pytest

from relloc import acceptance


@pytest.mark.parametrize(
    "number", sorted(acceptance.CRITERIA), ids=[f"{n:02d}-{t.replace(' ', '-')}" for n, (t, _) in sorted(acceptance.CRITERIA.items())]
)
def test_criterion(number, capsys):
    res = acceptance.run_criterion(number)
    with capsys.disabled():
        print("\n" + res.line(), flush=True)
    assert res.passed, res.measured


if __name__ == "__main__":
    results = acceptance.run_all()
    for res in results:
        print(res.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
