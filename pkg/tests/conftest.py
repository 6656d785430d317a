import numpy as np
import pytest

from thermsched.topology import build_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mesh4():
    return build_mesh(4, 4)


# acceptance verdicts, filled in by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
