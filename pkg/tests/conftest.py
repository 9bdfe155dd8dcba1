import numpy as np
import pytest

from hsrecon.hypercube import HyperCube, WavenumberAxis


def random_cube(rng, nx, ny, nb, start=1894.0, step=-4.0):
    vals = rng.standard_normal(nx * ny * nb).astype(np.float32)
    return HyperCube(nx, ny, WavenumberAxis(start, step, nb), vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    """Log one acceptance verdict; all verdicts are echoed in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
