import numpy as np
import pytest

from whitenet.numerics import RngState

ACCEPTANCE_LINES = []


def record_criterion(label, ok, detail):
    """Collect one acceptance pass/fail line; echoed in the run summary."""
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fd_grad(func, x, h=1e-5):
    """Central finite-difference gradient of scalar func at x (element loop)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = func(x)
        flat[i] = old - h
        fm = func(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-7):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def rng():
    return RngState(1234)
