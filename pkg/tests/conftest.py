import numpy as np
import pytest

from varex.grid import build_grid


@pytest.fixture
def line101():
    return build_grid(1, [(0.0, 1.0)], 101)


@pytest.fixture
def line401():
    return build_grid(1, [(0.0, 1.0)], 401)


@pytest.fixture
def square33():
    return build_grid(2, [(0.0, 1.0), (0.0, 1.0)], 33)


@pytest.fixture
def two_samples():
    return build_grid(1, [(0.0, 1.0)], 101, samples=(0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
