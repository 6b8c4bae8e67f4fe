import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewlin import CAT_MAP, GridFunction, SkewProduct, SolverConfig, assemble_H, solve_conjugacy
from skewlin.analysis import (
    BoundCheck,
    EstimationError,
    OracleError,
    check_bounds,
    check_operator_norm,
    conjugacy_residual,
    estimate_holder,
    koenigs_oracle,
    measure_constants,
    narrow_band_check,
    required_checks,
)
from skewlin.gridfn import SubgridScaleWarning
from skewlin.skew_product import ExpressionFamily, MobiusFamily, MultiplierBounds, estimate_bounds
from skewlin.theory import AlphaTheta

from conftest import constant_family


class ExactMobiusH:
    def fiber(self, b, x):
        return x / (1 + 0.2 * np.asarray(x))


# -- conjugacy residual ---------------------------------------------------------------

def test_residual_linear_identity():
    F = SkewProduct(CAT_MAP, ExpressionFamily("(0.5 + 0.1*sin(2*pi*b1))*x"))
    H = assemble_H(GridFunction.zeros(2, 8, 5, 0.1))
    assert conjugacy_residual(F, H, n_random=500).sup == 0.0


def test_residual_exact_mobius(mobius):
    rep = conjugacy_residual(mobius, ExactMobiusH(), epsilon=0.1, n_b=16, n_x=9, n_random=2000)
    assert rep.sup <= 1e-12


def test_residual_solved_mobius(mobius, mobius_solution):
    h, _ = mobius_solution
    assert conjugacy_residual(mobius, assemble_H(h), n_random=2000).sup <= 1e-8


# -- Koenigs oracle -------------------------------------------------------------------

def test_koenigs_linear():
    x = np.array([0.01, 0.05, 0.1])
    np.testing.assert_allclose(koenigs_oracle(lambda y: 0.5 * y, x), x, rtol=1e-14)


def test_koenigs_mobius():
    assert koenigs_oracle(lambda y: 0.5 * y / (1 - 0.1 * y), 0.1, lam=0.5)[0] == pytest.approx(0.1 / 1.02, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.001, 0.05))
def test_koenigs_functional_equation(x):
    f = lambda y: 0.5 * y + 0.3 * y ** 2 * (1 - y)
    H = koenigs_oracle(f, np.array([x, 0.5 * x]), lam=0.5)
    assert abs(f(H[0]) - H[1]) <= 1e-9


def test_koenigs_agrees_with_solver():
    F = SkewProduct(CAT_MAP, ExpressionFamily("0.5*x + 0.3*x^2*(1 - x)"))
    h, _ = solve_conjugacy(F, SolverConfig(epsilon=0.05))
    x = np.array([0.05])
    H = assemble_H(h).fiber(np.zeros((1, 2)), x)
    assert abs(H[0] - koenigs_oracle(lambda y: 0.5 * y + 0.3 * y ** 2 * (1 - y), x, lam=0.5)[0]) <= 1e-6


def test_koenigs_rejects_expanding_map():
    with pytest.raises(OracleError):
        koenigs_oracle(lambda y: 1.5 * y, 0.1)


# -- Holder exponent ------------------------------------------------------------------

def test_holder_exact_in_b():
    h = GridFunction.from_function(lambda b, x: x + 0 * b[..., 0], 2, 64, 5, 0.1)
    est = estimate_holder(h, scales=(1 / 32, 1 / 16, 1 / 8), n_pairs=2000)
    assert est.exact_in_b and est.alpha_hat is None and est.label == "exact in b"


def test_holder_smooth_function():
    h = GridFunction.from_function(lambda b, x: np.sin(2 * np.pi * b[..., 0]) * x, 2, 128, 5, 0.1)
    est = estimate_holder(h, scales=(1 / 64, 1 / 32, 1 / 16, 1 / 8), n_pairs=10000)
    assert est.alpha_hat == pytest.approx(1.0, abs=0.1)


def test_holder_too_few_scales():
    h = GridFunction.zeros(2, 8, 5, 0.1)
    with pytest.warns(SubgridScaleWarning), pytest.raises(EstimationError):
        estimate_holder(h, scales=(1 / 4, 1 / 16, 1 / 32))


def test_holder_quadratic_solution(quad_solution, quad):
    h, rep = quad_solution
    at = AlphaTheta(**rep.alpha_theta)
    est = estimate_holder(h, at, scales=(1 / 32, 1 / 16, 1 / 8, 1 / 4), n_pairs=4000)
    assert est.alpha_hat >= at.alpha


# -- bound checks ---------------------------------------------------------------------

def test_constant_lambda_cocycle_is_flat():
    F = SkewProduct(CAT_MAP, constant_family(0.5, 0.05))
    at = AlphaTheta.build(1.0, CAT_MAP.mu, 0.5)
    checks = check_bounds(F, at, depth=3, n_pairs=500)
    assert all(c.measured == 0.0 for c in checks if c.name == "Pi_n Holder")
    assert all(c.passed for c in checks)


def test_pi_n_example():
    F = SkewProduct(CAT_MAP, ExpressionFamily("(0.5 + 0.1*sin(2*pi*b1))*x"))
    c = measure_constants(F)
    at = AlphaTheta.build(1.0, CAT_MAP.mu, c.q, alpha=0.5)
    assert at.valid
    check = [k for k in check_bounds(F, at, depth=5, constants=c) if k.name == "Pi_n Holder" and k.n == 5][0]
    assert check.theoretical == pytest.approx(c.c_lam * at.theta ** 5 / ((CAT_MAP.mu ** 0.5 - 1) * c.q))
    assert check.measured > 0 and check.passed


def test_operator_norm_saturates():
    F0 = SkewProduct(CAT_MAP, constant_family(0.5, 0.05)).linearize()
    cfg = SolverConfig(n_b=8, n_x=5, epsilon=0.1, tail_tol=1e-14)
    chk = check_operator_norm(F0, cfg, count=5)
    assert chk.theoretical == pytest.approx(4.0)
    assert chk.passed and chk.measured <= 4.0 * (1 + 1e-6)
    Q1 = GridFunction(np.ones((8, 8, 5)), 0.1)
    from skewlin import homological_solve
    assert homological_solve(Q1, F0, cfg)[0].c_norm() == pytest.approx(4.0, abs=1e-9)


def test_required_checks_pass_for_quadratic(quad):
    c = measure_constants(quad)
    at = AlphaTheta.build(1.0, CAT_MAP.mu, c.q)
    checks = check_bounds(quad, at, depth=10, constants=c)
    failed = [(k.name, k.n, k.variant) for k in required_checks(checks) if not k.passed]
    assert not failed
    assert {k.variant for k in checks} >= {"printed", "corrected"}


def test_bound_depth_limit(quad):
    with pytest.raises(ValueError):
        check_bounds(quad, AlphaTheta.build(1.0, CAT_MAP.mu, 0.6), depth=16)


@given(st.floats(0.1, 10), st.floats(0, 1), st.floats(0, 1))
def test_bound_check_pass_rule(theory_value, frac, slack):
    m = theory_value * (1 + slack) * frac
    assert BoundCheck("x", 0, theory_value, m, slack).passed


# -- narrow band ----------------------------------------------------------------------

def test_narrow_band_examples(quad):
    F0 = SkewProduct(CAT_MAP, constant_family(0.5, 0.05)).linearize()
    assert narrow_band_check(F0, MultiplierBounds(0.5, 0.5, 1))
    assert not narrow_band_check(F0, MultiplierBounds(0.9, 0.4, 1))
    qF0 = quad.linearize()
    assert narrow_band_check(qF0, estimate_bounds(qF0, 64))
