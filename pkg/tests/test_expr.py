import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from skewlin.expr import ExprError, Expression

VARS = ("x", "b1", "b2")
SYM = dict(zip(VARS, sympy.symbols(VARS)))


def sympy_eval(text, env, order=0):
    """Independent oracle: sympy parse, differentiate in x, evaluate."""
    e = sympy.sympify(text.replace("^", "**"), locals={**SYM, "pi": sympy.pi, "e": sympy.E})
    if order:
        e = sympy.diff(e, SYM["x"], order)
    f = sympy.lambdify([SYM[v] for v in VARS], e, "numpy")
    return np.broadcast_to(f(*(env[v] for v in VARS)), np.shape(env["x"]))


CASES = [
    "0.5*x + 0.3*x^2*(1 - x)",
    "(0.85 - 0.35*cos(2*pi*b1))*x + 0.3*x^2*(1 - x)",
    "0.5*x/(1 - 0.1*x)",
    "x*exp(-x)*(1 + 0.1*sin(2*pi*b2))",
    "sqrt(1 + x) - 1 + log(1 + x^2)",
    "-x^2^2 + 2**-1*x",
    "x^3/3 - e*x",
]


@pytest.mark.parametrize("text", CASES)
@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_matches_sympy(text, order, rng):
    env = {"x": rng.uniform(0, 1, 50), "b1": rng.random(50), "b2": rng.random(50)}
    expr = Expression(text, VARS)
    got = expr.derivative("x", order)(**env) if order else expr(**env)
    np.testing.assert_allclose(np.broadcast_to(got, (50,)), sympy_eval(text, env, order), rtol=1e-12, atol=1e-12)


def test_precedence_and_associativity():
    ev = lambda t: float(Expression(t, ("x",))(x=np.float64(2.0)))
    assert ev("2^3^2") == 2.0 ** 9
    assert ev("-2^2") == -4.0
    assert ev("1 - 2 - 3") == -4.0
    assert ev("8 / 2 / 2") == 2.0
    assert ev("2*x^2") == 8.0
    assert ev("(1 + x)*(1 - x)") == -3.0


@pytest.mark.parametrize("text", ["x +", "sin(x", "foo(x)", "x y", "2 ** ", "b9*x", "x $ 2", ""])
def test_rejects_malformed(text):
    with pytest.raises(ExprError):
        Expression(text, VARS)


def test_depends_on():
    e = Expression("x + 0*b1 + cos(b2)", VARS)
    assert e.depends_on("b2") and e.depends_on("x")
    assert not Expression("x^2", VARS).depends_on("b1")


@settings(max_examples=100)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3))
def test_polynomial_arithmetic(a, b, x):
    e = Expression(f"({a})*x^2 + ({b})*x - x/({x})", ("x",))
    expected = a * x * x + b * x - 1.0
    assert float(e(x=np.float64(x))) == pytest.approx(expected, rel=1e-12, abs=1e-12)
