import numpy as np
import pytest

from abfdr.lp import build_psi_30
from abfdr.model import OPTIMIZELY_MARGINALS_A, MetricPanel
from abfdr.simulate import ProbPanel


@pytest.fixture(scope="session")
def psi30():
    return build_psi_30(OPTIMIZELY_MARGINALS_A)


@pytest.fixture(scope="session")
def superiority5():
    return MetricPanel.superiority(5)


def random_panel(rng, m=50, K=5, ties=False, n=1000):
    """Synthetic panel: true alternatives skew towards high probabilities."""
    truth = rng.random((m, K)) < 0.6
    truth[np.arange(m), rng.integers(0, K, m)] = rng.random(m) < 0.5
    probs = np.where(truth, rng.beta(5, 1, (m, K)), rng.beta(1, 2, (m, K)))
    if ties:
        probs = np.round(probs, 1)
    probs = np.clip(probs, 1e-4, 1 - 1e-4)
    return ProbPanel(probs, np.zeros(m, int), truth, n)


#: Pass/fail lines written by the acceptance tests.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
