import numpy as np
import pytest

from hetnmpc.kkt import pattern_from_nlp
from hetnmpc.model import crane_model, linear_model
from hetnmpc.transcription import OcpSpec, build_nlp, crane_ocp, make_tableau

X_HAT = np.array([0.5, 0.0, 0.7, 0.0, -0.2, -0.5])


def crane_nlp(N=10, tableau="trapezoidal", **kw):
    return build_nlp(crane_ocp(N=N, **kw), crane_model(), make_tableau(tableau))


def scalar_nlp(target=0.0, u_lb=None):
    """min 0.5 (u - target)^2 over one input, optionally with u >= u_lb.

    The model is xdot = u with T_s = 1 so the least-squares weight is one.
    """
    spec = OcpSpec(
        N=1,
        T_s=1.0,
        x_hat=np.zeros(1),
        stage_cost=lambda x, u, s: np.array([u[0] - target]),
        stage_cost_jac=lambda x, u, s: (np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 0))),
        terminal_cost=lambda x, s: np.zeros(1),
        terminal_cost_jac=lambda x, s: (np.zeros((1, 1)), np.zeros((1, 0))),
        u_lb=None if u_lb is None else np.array([u_lb]),
    )
    return build_nlp(spec, linear_model([[0.0]], [[1.0]]), make_tableau("explicit_euler"))


@pytest.fixture(scope="session")
def crane10():
    return crane_nlp(10)


@pytest.fixture(scope="session")
def crane10_pattern(crane10):
    return pattern_from_nlp(crane10)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
