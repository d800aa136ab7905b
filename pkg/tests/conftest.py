import numpy as np
import pytest

from faircb.core import ConstraintSpec, ContextDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, max_m=3, max_k=3, v_frac=0.9):
    """Random solver instance: (g, ConstraintSpec, eta)."""
    M = int(rng.integers(1, max_m + 1))
    K = int(rng.integers(2, max_k + 1))
    eta = float(np.exp(rng.uniform(np.log(0.01), np.log(10.0))))
    q = rng.dirichlet(np.ones(M))
    v = float(rng.uniform(0.0, v_frac / K))
    g = rng.uniform(0.0, 6.0 / eta, size=(M, K))
    return g, ConstraintSpec(ContextDistribution(q), v, K), eta


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
