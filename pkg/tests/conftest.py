import numpy as np
import pytest

from vopt_risk.model import PortfolioSpec, generate_portfolio, tiny1
from vopt_risk.risk import make_risk


@pytest.fixture(scope="session")
def tiny():
    return tiny1()


@pytest.fixture(scope="session")
def tiny_cvar():
    return make_risk("cvar", [0.5, 0.5])


@pytest.fixture(scope="session")
def tiny_entropic():
    return make_risk("entropic", [1.0, 1.0])


@pytest.fixture(scope="session")
def desk20():
    """Small 2-asset portfolio instance shared by the solver tests."""
    return generate_portfolio(PortfolioSpec(J=2, I=20, rng_seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
