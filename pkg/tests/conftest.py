import numpy as np
import pytest

from jumpspde.noise import MarkSpace
from jumpspde.spectral import SpectralOperator

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def sym_marks():
    return MarkSpace.finite(2.0, [(1.0, 0.5), (-1.0, 0.5)])


@pytest.fixture
def op8():
    return SpectralOperator.quadratic(8, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
