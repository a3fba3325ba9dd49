import numpy as np
import pytest

from weak_mlmc.models import BasketModelParams, basket_model, basket_payoff, gbm_model, linear_sde

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def basket():
    p = BasketModelParams()
    return basket_model(p), basket_payoff(p)


@pytest.fixture
def gbm():
    return gbm_model(rate=0.2, vol=0.1)


@pytest.fixture
def ode():
    # dx = 0.2 x dt, no noise
    return linear_sde([[0.2]], [[[0.0]]], [1.0], 1.0)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
