import numpy as np
import pytest

from qrex.mdp import TabularModel


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="run acceptance checks at full scale (500 Mountain Car seeds)")


@pytest.fixture
def full_scale(request):
    return request.config.getoption("--full")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def chain_model(p: float, q: float, gamma: float = 0.9) -> TabularModel:
    """Two states, one action; leave state 0 w.p. ``p`` and state 1 w.p. ``q``."""
    P = np.array([[[1 - p, p]], [[q, 1 - q]]])
    return TabularModel(P, np.zeros((2, 1)), gamma)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
