import numpy as np
import pytest
import scipy.linalg
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def nilpotent_pair():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0], [1.0, 0.0]])
    return a, b


def dense_split_step(kind, theta, a, b, h):
    """Oracle step matrix from scipy's expm, written out per scheme."""
    e = scipy.linalg.expm
    if kind == "sequential":
        return e(h * b) @ e(h * a)
    if kind == "strang":
        return e(h / 2 * a) @ e(h * b) @ e(h / 2 * a)
    return theta * (e(h * b) @ e(h * a)) + (1 - theta) * (e(h * a) @ e(h * b))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line for an acceptance criterion and assert it."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
