import numpy as np
import pytest

from nbodyhj import _kernels
from nbodyhj.core import MassSystem
from nbodyhj.reference import make_scenario

# filled by test_acceptance.py, echoed after the run
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Load (or compile) the numba kernels once so timed tests measure the numerics."""
    P = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    m = np.ones(2)
    k = _kernels.impl
    k.pot_grad(P, m)
    k.pot_diff_grad(P, 0.1 * P, m)
    k.hess_apply(P, m, P)
    k.hess_blocks(P, m)
    y0 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.5, 0.0, -0.5])
    k.dopri(y0, 1.0, np.array([1.5]), m, 2, 2, 1e-8, 1e-10, 1e-8, 10000)


@pytest.fixture
def two_body():
    return MassSystem([1.0, 1.0], 2)


@pytest.fixture
def three_body():
    return MassSystem([1.0, 1.0, 1.0], 2)


@pytest.fixture
def hyperbolic_spec(two_body):
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    x0 = np.array([[0.5, 0.5], [-0.5, -0.5]])
    return make_scenario("hyperbolic", two_body, a=a, x0=x0)


@pytest.fixture
def parabolic_spec(two_body):
    spec = make_scenario("parabolic", two_body)
    return spec.with_x(spec.c)


@pytest.fixture
def hp_spec(three_body):
    a = np.array([[1.0, 0.0], [1.0, 0.0], [-2.0, 0.0]])
    spec = make_scenario("hyperbolic_parabolic", three_body, a=a)
    return spec.with_x(spec.a + spec.c)
