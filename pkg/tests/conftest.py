import numpy as np
import pytest
from hypothesis import settings

# numba compiles on first call; a per-example deadline would flag that
settings.register_profile("tfisher", deadline=None, max_examples=60)
settings.load_profile("tfisher")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)``; a summary line per criterion is printed at the end."""

    def record(number, ok, detail):
        prev = _CRITERIA.get(number)
        _CRITERIA[number] = (bool(ok) and (prev is None or prev[0]),
                             detail if prev is None else prev[1] + "; " + detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
