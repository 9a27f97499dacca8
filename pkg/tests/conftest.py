import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from thor.mdp import TabularMdp, random_mdp  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mdp():
    return random_mdp(5, 3, 0.9, np.random.default_rng(7))


def cycle_mdp(costs=(0.0, 1.0), gamma=0.5) -> TabularMdp:
    """Two states that swap deterministically under the single action."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    return TabularMdp(P, np.array(costs, dtype=float)[:, None], gamma, np.array([1.0, 0.0]))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
