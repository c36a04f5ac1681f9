import numpy as np
import pytest

from utransformer import tensor as tn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f() with respect to array x (modified in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_grads(build, *arrays, tol=1e-5, h=1e-6):
    """Backprop vs central differences for every input array of ``build``."""
    leaves = [tn.parameter(a) for a in arrays]
    build(*leaves).backward()
    for leaf in leaves:
        with tn.no_grad():
            fd = numeric_grad(lambda: build(*leaves).item(), leaf.data, h)
        assert max_rel_err(leaf.grad, fd) < tol, (leaf.grad, fd)


# Acceptance verdicts, collected by tests/test_acceptance.py and repeated at the end of the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
