import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skewlin.gridfn import DomainError, GridFunction, SubgridScaleWarning


def grid_of(fn, n_b=16, n_x=9, eps=0.1, dim=2):
    return GridFunction.from_function(fn, dim, n_b, n_x, eps)


# -- eval --------------------------------------------------------------------------

def test_eval_reproduces_nodes(rng):
    g = GridFunction(rng.standard_normal((8, 8, 5)), 0.1)
    b = g.b_nodes()
    for j, x in enumerate(g.x_nodes):
        np.testing.assert_array_equal(g.eval(b, np.full(len(b), x)), g.flat()[:, j])


def test_eval_constant_and_linear(rng):
    c = grid_of(lambda b, x: -0.2 + 0 * x)
    b, x = rng.random((500, 2)) * 5 - 2, rng.uniform(0, 0.1, 500)
    np.testing.assert_allclose(c.eval(b, x), -0.2, atol=1e-15)
    lin = grid_of(lambda b, x: x + 0 * b[..., 0])
    mid = 0.5 * (lin.x_nodes[:-1] + lin.x_nodes[1:])
    np.testing.assert_allclose(lin.eval(np.zeros((len(mid), 2)), mid), mid, atol=1e-16)


def test_eval_is_periodic_in_b(rng):
    g = GridFunction(rng.standard_normal((8, 8, 5)), 0.1)
    b, x = rng.random((200, 2)), rng.uniform(0, 0.1, 200)
    shift = rng.integers(-3, 4, (200, 2))
    np.testing.assert_allclose(g.eval(b + shift, x), g.eval(b, x), atol=1e-12)


def test_eval_rejects_x_outside(rng):
    g = GridFunction(np.zeros((4, 4, 3)), 0.1)
    with pytest.raises(DomainError):
        g.eval(np.zeros(2), 0.11)
    with pytest.raises(DomainError):
        g.eval_rows(np.array([0]), np.array([[-0.01]]))


def test_eval_rows_matches_eval(rng):
    g = GridFunction(rng.standard_normal((8, 8, 9)), 0.05)
    rows = rng.integers(0, 64, 300)
    x = rng.uniform(0, 0.05, (300, 4))
    np.testing.assert_allclose(g.eval_rows(rows, x), g.eval(g.b_nodes()[rows][:, None, :], x), atol=1e-14)


def test_interpolation_error_is_second_order(rng):
    fn = lambda b, x: np.sin(2 * np.pi * b[..., 0]) * np.cos(2 * np.pi * b[..., 1]) + 30 * x * x
    b, x = rng.random((20_000, 2)), rng.uniform(0, 0.1, 20_000)
    exact = fn(b, x)
    errs = [np.max(np.abs(grid_of(fn, n_b, n_x).eval(b, x) - exact)) for n_b, n_x in ((16, 9), (32, 17))]
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_eval_one_and_three_dims(rng):
    for dim in (1, 3):
        fn = lambda b, x: b.sum(axis=-1) * 0 + 2 * x
        g = grid_of(fn, n_b=4, dim=dim)
        x = rng.uniform(0, 0.1, 50)
        np.testing.assert_allclose(g.eval(rng.random((50, dim)), x), 2 * x, atol=1e-15)


# -- norms ------------------------------------------------------------------------

def test_c_norm_examples():
    assert GridFunction.zeros(2, 4, 3, 0.1).c_norm() == 0.0
    v = np.zeros((4, 4, 3))
    v[1, 2, 0] = -3.0
    assert GridFunction(v, 0.1).c_norm() == 3.0
    assert GridFunction(np.full((4, 4, 3), -0.2), 0.1).c_norm() == 0.2


def test_lipschitz_examples():
    assert GridFunction(np.full((4, 4, 3), 1.5), 0.1).lipschitz_x() == 0.0
    assert grid_of(lambda b, x: x + 0 * b[..., 0]).lipschitz_x() == pytest.approx(1.0)
    sq = grid_of(lambda b, x: x * x + 0 * b[..., 0], n_b=4, n_x=11)
    assert sq.lipschitz_x() == pytest.approx((0.01 - 0.0081) / 0.01, rel=1e-12)


def test_holder_examples():
    flat = grid_of(lambda b, x: x + 0 * b[..., 0])
    assert flat.holder_norm(0.5, scales=(0.25, 0.125, 0.0625))[0] == 0.0
    s = grid_of(lambda b, x: np.sin(2 * np.pi * b[..., 0]) + 0 * x, n_b=256, n_x=3)
    best, rows = s.holder_norm(1.0, 5000, scales=(2 ** -5, 2 ** -6, 2 ** -7))
    ratios = [r for _, r, _ in rows]
    # |sin(2 pi a) - sin(2 pi c)| <= 2 pi |a - c|, nearly attained at the steepest point
    assert all(r <= 2 * np.pi * (1 + 1e-9) for r in ratios)
    assert ratios[-1] >= 0.95 * 2 * np.pi


def test_holder_diagnoses_jumps():
    jump = grid_of(lambda b, x: (b[..., 0] < 0.5).astype(float) + 0 * x, n_b=256)
    _, rows = jump.holder_norm(1.0, 4000, scales=(2 ** -4, 2 ** -6, 2 ** -8))
    ratios = [r for _, r, _ in rows]
    assert ratios[0] < ratios[1] < ratios[2]


def test_subgrid_scale_warns():
    g = GridFunction.zeros(2, 8, 3, 0.1)
    with pytest.warns(SubgridScaleWarning):
        g.holder_norm(0.5, 10, scales=(2 ** -5,))


def test_holder_monotone_in_alpha(rng):
    g = GridFunction(rng.standard_normal((16, 16, 5)), 0.1)
    _, lo = g.holder_norm(0.3, 500, scales=(2 ** -3, 2 ** -4))
    _, hi = g.holder_norm(0.7, 500, scales=(2 ** -3, 2 ** -4))
    assert all(h[1] > l[1] for h, l in zip(hi, lo))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 6, 4), elements=st.floats(-10, 10)), st.floats(-5, 5))
def test_norms_are_homogeneous(values, c):
    g = GridFunction(values, 0.1)
    cg = g * c
    assert cg.c_norm() == pytest.approx(abs(c) * g.c_norm(), rel=1e-12, abs=1e-300)
    assert cg.lipschitz_x() == pytest.approx(abs(c) * g.lipschitz_x(), rel=1e-12, abs=1e-300)
    h1, h2 = g.holder_norm(0.5, 50, (0.4, 0.2))[0], cg.holder_norm(0.5, 50, (0.4, 0.2))[0]
    assert h2 == pytest.approx(abs(c) * h1, rel=1e-12, abs=1e-300)


def test_rejects_bad_values():
    with pytest.raises(ValueError):
        GridFunction(np.full((4, 4, 3), np.nan), 0.1)
    with pytest.raises(ValueError):
        GridFunction(np.zeros((4, 5, 3)), 0.1)
    with pytest.raises(ValueError):
        GridFunction(np.zeros((4, 4, 3)), 0.0)


def test_values_are_read_only():
    g = GridFunction.zeros(2, 4, 3, 0.1)
    with pytest.raises(ValueError):
        g.values[0, 0, 0] = 1.0


# -- serialization ----------------------------------------------------------------

def test_binary_and_csv_round_trip(tmp_path, rng):
    g = GridFunction(rng.standard_normal((8, 8, 5)) * 1e-3, 0.05)
    g.save_binary(tmp_path / "h.bin")
    meta = json.loads((tmp_path / "h.meta.json").read_text())
    assert meta["shape"] == [8, 8, 5] and meta["dtype"] == "<f8"
    back = GridFunction.load_binary(tmp_path / "h.bin")
    np.testing.assert_array_equal(back.values, g.values)
    assert back.epsilon == g.epsilon
    g.save_csv(tmp_path / "h.csv")
    back = GridFunction.load_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.values, g.values)
    assert back.epsilon == g.epsilon
