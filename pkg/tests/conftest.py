import numpy as np
import pytest

from cmabmt.episodic import TabularMdp

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def chain_mdp(rewards_per_step, S=1):
    """Deterministic chain on state 0 with one action and the given rewards."""
    H = len(rewards_per_step)
    P = np.zeros((H, S, 1, S))
    P[..., 0] = 1.0
    R = np.zeros((H, S, 1))
    R[:, 0, 0] = rewards_per_step
    return TabularMdp(P, R)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
