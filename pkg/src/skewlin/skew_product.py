"""Fiber map families, the skew product F and its fiberwise linearization F0.

All evaluators are vectorized: ``b`` has shape (..., d) and ``x`` any shape
broadcastable against ``b[..., 0]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression
from .torus import ToralAutomorphism, wrap


class ModelViolationError(ValueError):
    """A fiber map left the interval it is supposed to preserve."""


class QuadratureWarning(RuntimeWarning):
    pass


def _coord(b, i):
    b = np.asarray(b, dtype=float)
    return b[..., min(i, b.shape[-1] - 1)]


class FiberMapFamily:
    """Base class for b-dependent interval maps x -> f_b(x).

    Subclasses implement ``value`` and ``deriv``.  ``quadratic`` defaults to
    the Hadamard integral and should be overridden when a closed form is
    available, since the solver evaluates it millions of times.
    """

    name = "abstract"
    closed_form_quadratic = False

    def __init__(self, dim=2, smoothness_k=3, holder_beta=1.0, holder_constants=None):
        self.dim = dim
        self.smoothness_k = smoothness_k
        self.holder_beta = holder_beta
        self.holder_constants = holder_constants

    def value(self, b, x):
        raise NotImplementedError

    def deriv(self, b, x, order=1):
        raise NotImplementedError

    def multiplier(self, b):
        b = np.asarray(b, dtype=float)
        return self.deriv(b, np.zeros(b.shape[:-1]), 1)

    def quadratic(self, b, x):
        return quadratic_part(self, b, x)

    def boundary_defect(self, b):
        """max(|f_b(0)|, |f_b(1) - 1|) at the given base points."""
        b = np.asarray(b, dtype=float)
        zeros = np.zeros(b.shape[:-1])
        return np.maximum(np.abs(self.value(b, zeros)), np.abs(self.value(b, zeros + 1.0) - 1.0))

    def to_dict(self):
        return {"family": self.name, "k": self.smoothness_k, "beta": self.holder_beta}


class QuadraticFamily(FiberMapFamily):
    """f_b(x) = lam_b x + c_b x^2 (1 - x), optionally plus (1 - lam_b) x^2.

    lam_b = q0 + q1 sin(2 pi b1) and c_b = c0 (1 + c1 cos(2 pi b2)).  The
    ``pin_top`` term makes f_b(1) = 1; without it f_b(1) = lam_b.
    """

    name = "quadratic"
    closed_form_quadratic = True

    def __init__(self, q0=0.5, q1=0.1, c0=0.3, c1=0.5, pin_top=False, dim=2,
                 smoothness_k=3, holder_beta=1.0):
        super().__init__(dim, smoothness_k, holder_beta)
        self.q0, self.q1, self.c0, self.c1 = q0, q1, c0, c1
        self.pin_top = pin_top

    def lam(self, b):
        return self.q0 + self.q1 * np.sin(2 * np.pi * _coord(b, 0))

    def c(self, b):
        return self.c0 * (1.0 + self.c1 * np.cos(2 * np.pi * _coord(b, 1)))

    def _top(self, b):
        return 1.0 - self.lam(b) if self.pin_top else 0.0

    def value(self, b, x):
        x = np.asarray(x, dtype=float)
        return self.lam(b) * x + (self.c(b) * (1.0 - x) + self._top(b)) * x * x

    def deriv(self, b, x, order=1):
        x = np.asarray(x, dtype=float)
        lam, c, top = self.lam(b), self.c(b), self._top(b)
        if order == 0:
            return self.value(b, x)
        if order == 1:
            return lam + c * (2 * x - 3 * x * x) + 2 * top * x
        if order == 2:
            return c * (2 - 6 * x) + 2 * top + 0 * x
        if order == 3:
            return -6 * c + 0 * x
        return np.zeros(np.broadcast_shapes(np.shape(lam), x.shape))

    def multiplier(self, b):
        return self.lam(b)

    def quadratic(self, b, x):
        return self.c(b) * (1.0 - np.asarray(x, dtype=float)) + self._top(b)

    def to_dict(self):
        return {**super().to_dict(), "q0": self.q0, "q1": self.q1, "c0": self.c0,
                "c1": self.c1, "pin_top": self.pin_top, "dim": self.dim}


class MobiusFamily(FiberMapFamily):
    """b-independent f(x) = lam x / (1 - m x).

    Fixes x = 1 only when m = 1 - lam (see ``boundary_preserving``).  Its
    linearizing conjugacy is H(x) = x / (1 + m x / (1 - lam)).
    """

    name = "mobius"
    closed_form_quadratic = True

    def __init__(self, lam=0.5, m=0.1, dim=2, smoothness_k=4, holder_beta=1.0):
        if not 0 < lam:
            raise ValueError("lam must be positive")
        if not m < 1:
            raise ValueError("m must be < 1 so that the pole stays outside [0, 1]")
        super().__init__(dim, smoothness_k, holder_beta)
        self.lam, self.m = lam, m

    @classmethod
    def boundary_preserving(cls, lam=0.5, **kw):
        return cls(lam=lam, m=1.0 - lam, **kw)

    def _shape(self, b, x):
        return np.broadcast_shapes(np.shape(b)[:-1], np.shape(x))

    def value(self, b, x):
        x = np.broadcast_to(np.asarray(x, dtype=float), self._shape(b, x))
        return self.lam * x / (1.0 - self.m * x)

    def deriv(self, b, x, order=1):
        if order == 0:
            return self.value(b, x)
        x = np.broadcast_to(np.asarray(x, dtype=float), self._shape(b, x))
        return self.lam * math.factorial(order) * self.m ** (order - 1) / (1.0 - self.m * x) ** (order + 1)

    def multiplier(self, b):
        return np.full(np.shape(b)[:-1], float(self.lam))

    def quadratic(self, b, x):
        x = np.broadcast_to(np.asarray(x, dtype=float), self._shape(b, x))
        return self.lam * self.m / (1.0 - self.m * x)

    def conjugacy(self, x):
        """Exact fiber conjugacy H with f(H(x)) = H(lam x)."""
        return x / (1.0 + self.m / (1.0 - self.lam) * x)

    def normalized_conjugacy(self, x):
        """h(x) with H(x) = x + x^2 h(x)."""
        c = self.m / (1.0 - self.lam)
        return -c / (1.0 + c * np.asarray(x, dtype=float))

    def to_dict(self):
        return {**super().to_dict(), "lam": self.lam, "m": self.m, "dim": self.dim}


class ExpressionFamily(FiberMapFamily):
    """Family given by an expression string in x, b1, ..., bd."""

    name = "custom"
    closed_form_quadratic = True
    TAYLOR_SWITCH = 1e-3

    def __init__(self, expression, dim=2, smoothness_k=3, holder_beta=1.0):
        super().__init__(dim, smoothness_k, holder_beta)
        variables = ("x",) + tuple(f"b{i + 1}" for i in range(dim))
        self.expr = expression if isinstance(expression, Expression) else Expression(expression, variables)
        self._derivs = {0: self.expr}

    def _derivative(self, order):
        if order not in self._derivs:
            self._derivs[order] = self._derivative(order - 1).derivative("x")
        return self._derivs[order]

    def _env(self, b, x):
        b = np.asarray(b, dtype=float)
        x = np.asarray(x, dtype=float)
        env = {"x": x}
        for i in range(self.dim):
            env[f"b{i + 1}"] = b[..., i]
        return env, np.broadcast_shapes(b.shape[:-1], x.shape)

    def value(self, b, x):
        return self.deriv(b, x, 0)

    def deriv(self, b, x, order=1):
        env, shape = self._env(b, x)
        out = self._derivative(order)(**env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def quadratic(self, b, x):
        """Q = (f - lam x) / x^2, switching to the Taylor polynomial at 0 for small x.

        Cancellation costs ~1e-16 / x in the direct quotient and the
        dropped Taylor term is ~x^4, so both stay near 1e-13 at the switch.
        """
        x = np.asarray(x, dtype=float)
        zero = np.zeros_like(x)
        lam = self.deriv(b, zero, 1)
        small = np.abs(x) < self.TAYLOR_SWITCH
        xs = np.where(small, 1.0, x)
        out = (self.deriv(b, xs, 0) - lam * xs) / (xs * xs)
        if np.any(small):
            taylor, fact = 0.0, 1.0
            for order in range(2, 6):
                fact *= order
                taylor = taylor + self.deriv(b, zero, order) * x ** (order - 2) / fact
            out = np.where(small, taylor, out)
        return out

    def to_dict(self):
        return {**super().to_dict(), "expression": self.expr.text, "dim": self.dim}


class CallableFamily(FiberMapFamily):
    """Family from a plain vectorized callable f(b, x); derivatives by central differences."""

    name = "callable"

    def __init__(self, func, dim=2, smoothness_k=2, holder_beta=1.0):
        super().__init__(dim, smoothness_k, holder_beta)
        self.func = func

    def value(self, b, x):
        return np.asarray(self.func(np.asarray(b, dtype=float), np.asarray(x, dtype=float)), dtype=float)

    def deriv(self, b, x, order=1):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.value(b, x)
        # truncation ~ h^2, roundoff ~ eps/h^order
        h = np.maximum(1e-6, 1e-6 * np.abs(x)) * (1.0 if order == 1 else 1e2)
        return (self.deriv(b, x + h, order - 1) - self.deriv(b, x - h, order - 1)) / (2 * h)


_GL_CACHE = {}


def _gauss_legendre01(n):
    if n not in _GL_CACHE:
        s, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (s + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def quadratic_part(fiber, b, x, tol=1e-10, n0=16, n_max=512):
    """Q_b(x) = int_0^1 (1 - s) f_b''(x s) ds, so that f = lam x + x^2 Q.

    Gauss-Legendre with ``n0`` nodes, doubled until successive estimates agree
    to ``tol``.
    """
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    bb = b[..., None, :]
    xx = x[..., None]

    def rule(n):
        s, w = _gauss_legendre01(n)
        return np.sum(w * (1.0 - s) * fiber.deriv(bb, xx * s, 2), axis=-1)

    n = n0
    prev = rule(n)
    while n < n_max:
        n *= 2
        cur = rule(n)
        if np.max(np.abs(cur - prev), initial=0.0) < tol:
            return cur
        prev = cur
    warnings.warn(f"Q quadrature did not reach {tol:g} with {n_max} nodes", QuadratureWarning)
    return prev


@dataclass(frozen=True)
class SkewProduct:
    base: ToralAutomorphism
    fiber: FiberMapFamily

    def __post_init__(self):
        if self.fiber.dim != self.base.dim:
            raise ValueError(f"fiber family has dim {self.fiber.dim}, base has {self.base.dim}")

    def linearize(self):
        return LinearizedSkewProduct(self.base, self.fiber.multiplier)


@dataclass(frozen=True)
class LinearizedSkewProduct:
    base: ToralAutomorphism
    multiplier: object = field(compare=False)

    def lam(self, b):
        return np.asarray(self.multiplier(np.asarray(b, dtype=float)), dtype=float)


@dataclass(frozen=True)
class MultiplierBounds:
    q: float
    D: float
    n_samples: int
    lipschitz: float = 0.0

    @property
    def globalization_required(self):
        return self.q >= 1.0


def multiplier(fiber, b):
    return fiber.multiplier(b)


def cocycle_product(F0, b, n):
    """Pi_n(b) = lam(b) lam(Ab) ... lam(A^{n-1} b), with Pi_0 = 1."""
    if n < 0:
        raise ValueError("n must be non-negative")
    b = wrap(np.asarray(b, dtype=float))
    prod = np.ones(b.shape[:-1])
    for _ in range(n):
        prod = prod * F0.lam(b)
        b = F0.base.apply(b)
    return prod


def weighted_cocycle(F0, b, n):
    """P_n(b) = Pi_n(b) / lam(A^n b)."""
    b = np.asarray(b, dtype=float)
    return cocycle_product(F0, b, n) / F0.lam(F0.base.iterate(b, n))


def _lattice(n, d):
    return np.indices((n,) * d).reshape(d, -1).T / n


def estimate_bounds(F0, grid_resolution, inflate=False):
    """q = max and D = min of lam over the uniform grid of the given resolution.

    With ``inflate`` the extremes are pushed outward by the measured
    Lipschitz constant of lam times the largest distance to a grid node.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    d = F0.base.dim
    n = grid_resolution
    lam = F0.lam(_lattice(n, d)).reshape((n,) * d)
    lip = 0.0
    for axis in range(d):
        lip = max(lip, float(np.max(np.abs(np.roll(lam, -1, axis) - lam))) * n)
    q, D = float(lam.max()), float(lam.min())
    if inflate:
        pad = lip * math.sqrt(d) / (2 * n)
        q, D = q + pad, D - pad
    return MultiplierBounds(q=q, D=D, n_samples=lam.size, lipschitz=lip)


def solver_bounds(F0, n_b):
    """Bounds used by the solver: 4x finer grid, inflated to the safe side."""
    return estimate_bounds(F0, 4 * n_b, inflate=True)


def apply_F(F, b, x):
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("fiber coordinate must lie in [0, 1]")
    y = F.fiber.value(b, x)
    bad = (y < -1e-9) | (y > 1 + 1e-9)
    if np.any(bad):
        raise ModelViolationError(f"fiber map left [0, 1]: f = {np.asarray(y)[bad].ravel()[:3].tolist()}")
    return F.base.apply(b), y


def apply_F0(F0, b, x, k=1):
    """F0^k(b, x) = (A^k b, Pi_k(b) x)."""
    return F0.base.iterate(b, k), cocycle_product(F0, b, k) * np.asarray(x, dtype=float)


# -- measured regularity constants ---------------------------------------------

def _grad_norm(fn, pts, h=1e-6):
    d = pts.shape[-1]
    sq = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        sq = sq + ((fn(wrap(pts + e)) - fn(wrap(pts - e))) / (2 * h)) ** 2
    return np.sqrt(sq)


def lipschitz_of_multiplier(F0, rng, n_points=10_000, grid=128):
    """Lipschitz constant of b -> lam_b (Holder constant at alpha = 1).

    Max gradient norm over a uniform grid plus random points.
    """
    d = F0.base.dim
    pts = np.concatenate([_lattice(grid if d <= 2 else 16, d), rng.random((n_points, d))])
    return float(np.max(_grad_norm(F0.lam, pts)))


def quadratic_constants(fiber, rng, x_max=1.0, n_points=10_000, n_x=17):
    """Measured (sup |Q|, Lipschitz of Q in b, Lipschitz of Q in x) on T^d x [0, x_max]."""
    d = fiber.dim
    pts = rng.random((n_points, d))
    xs = np.linspace(0.0, x_max, n_x)
    q_sup = lip_b = lip_x = 0.0
    h = 1e-6
    for x in xs:
        xv = np.full(n_points, x)
        q_sup = max(q_sup, float(np.max(np.abs(fiber.quadratic(pts, xv)))))
        lip_b = max(lip_b, float(np.max(_grad_norm(lambda p: fiber.quadratic(p, xv), pts))))
        lo, hi = max(x - h, 0.0), min(x + h, x_max)
        dq = (fiber.quadratic(pts, np.full(n_points, hi)) - fiber.quadratic(pts, np.full(n_points, lo))) / (hi - lo)
        lip_x = max(lip_x, float(np.max(np.abs(dq))))
    return q_sup, lip_b, lip_x


def narrow_band(bounds: MultiplierBounds) -> bool:
    """(max lam)^2 < min lam."""
    return bounds.q ** 2 < bounds.D
