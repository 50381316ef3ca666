import numpy as np
import pytest


def random_matrix(rng, shape, field="real"):
    if field == "complex":
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return rng.standard_normal(shape)


def random_skew(rng, n, field="real"):
    a = random_matrix(rng, (n, n), field)
    return a - a.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(20220601)


@pytest.fixture(params=["real", "complex"])
def field(request):
    return request.param


# Acceptance verdicts, filled by tests/test_acceptance.py and printed at the end of the run.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
