import numpy as np
import pytest

from skewlin import CAT_MAP, SkewProduct, SolverConfig, solve_conjugacy
from skewlin.skew_product import ExpressionFamily, MobiusFamily, QuadraticFamily


def constant_family(lam=0.5, c=0.05):
    """f(x) = lam x + c x^2, so lam_b = lam and Q = c everywhere."""
    return ExpressionFamily(f"{lam}*x + {c}*x^2")


@pytest.fixture(scope="session")
def quad():
    return SkewProduct(CAT_MAP, QuadraticFamily())


@pytest.fixture(scope="session")
def mobius():
    return SkewProduct(CAT_MAP, MobiusFamily(0.5, 0.1))


@pytest.fixture(scope="session")
def quad_solution(quad):
    return solve_conjugacy(quad, SolverConfig(epsilon=0.05))


@pytest.fixture(scope="session")
def mobius_solution(mobius):
    return solve_conjugacy(mobius, SolverConfig(epsilon=0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
