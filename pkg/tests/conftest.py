import numpy as np
import pytest

from qcut.linalg import kron

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def product_state(*kets) -> np.ndarray:
    psi = kron(*(np.asarray(k, dtype=complex).reshape(-1, 1) for k in kets)).reshape(-1)
    return np.outer(psi, psi.conj())


PLUS = np.array([1, 1]) / np.sqrt(2)
ZERO = np.array([1, 0])
ONE = np.array([0, 1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
