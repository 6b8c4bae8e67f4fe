"""Homological operator L, shift operator Phi and the Picard iteration h -> L Phi h.

The b-grid i / n_b is mapped onto itself by the integer matrix A, so base
orbits are followed exactly as index permutations.  Only the fiber
coordinate Pi_k(b) x falls between nodes, and only h (never lam or Q) is
interpolated there.

Work is split into fixed blocks of base rows.  Each node's series is
summed in increasing k, so results do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import theory
from .gridfn import GridFunction
from .skew_product import LinearizedSkewProduct, SkewProduct, quadratic_part, solver_bounds
from .theory import AlphaTheta
from .torus import wrap

log = logging.getLogger(__name__)

BLOCK_ROWS = 1024


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


class DomainEscapeError(ValueError):
    pass


@dataclass
class SolverConfig:
    epsilon: float | None = None  # None: pick automatically
    alpha: float | None = None  # None: 0.9 * alpha_max
    truncation_N: int | None = None
    tail_tol: float = 1e-12
    fixed_point_tol: float = 1e-12
    max_iterations: int = 200
    n_b: int = 64
    n_x: int = 33
    workers: int = 1
    burn_in: int = 2
    holder_pairs: int = 400

    def __post_init__(self):
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must lie in (0, 1]")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.truncation_N is not None and self.truncation_N < 1:
            raise ConfigError("truncation_N must be >= 1")
        if not self.tail_tol > 0 or not self.fixed_point_tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.n_b < 2 or self.n_x < 2:
            raise ConfigError("grid sizes must be >= 2")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SpaceNParams:
    a_c: float
    a_lip: float
    a_alpha: float

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverReport:
    iterations: int = 0
    converged: bool = False
    final_delta: float = math.inf
    deltas: list = field(default_factory=list)
    contraction_estimates: list = field(default_factory=list)
    functional_residual: float = math.nan
    homological_residual: float = math.nan
    in_space_N: list = field(default_factory=list)
    epsilon: float = math.nan
    truncation_N: int = 0
    tail_bound: float = math.nan
    q: float = math.nan
    D: float = math.nan
    alpha_theta: dict = field(default_factory=dict)
    space_N: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# -- setup --------------------------------------------------------------------

def validate(F0: LinearizedSkewProduct, cfg: SolverConfig, beta=1.0, globalized=False):
    """Check q < 1 and theta < 1; returns (bounds, AlphaTheta)."""
    bounds = solver_bounds(F0, cfg.n_b)
    if bounds.q >= 1.0:
        raise ConfigError(
            f"globalization required: sup lam_b = {bounds.q:.6g} >= 1"
            + (" even after globalization" if globalized else "")
        )
    if bounds.D <= 0.0:
        raise ConfigError(f"inf lam_b = {bounds.D:.6g} must be positive")
    mu = F0.base.mu
    at = AlphaTheta.build(beta, mu, bounds.q, cfg.alpha)
    if at.theta >= 1.0:
        raise ConfigError(
            f"theta = mu^alpha q = {at.theta:.6g} >= 1 (mu = {mu:.6g}, alpha = {at.alpha:.6g}, "
            f"q = {bounds.q:.6g}); need alpha < alpha_max = {at.alpha_max:.6g}"
        )
    if at.alpha >= at.alpha_max:
        raise ConfigError(
            f"alpha = {at.alpha:.6g} >= alpha_max = min(beta, log_mu(1/q)) = {at.alpha_max:.6g} "
            f"(theta = {at.theta:.6g})"
        )
    return bounds, at


class Lattice:
    """Base orbits on the n_b^d grid: orbit indices, Pi_k and P_k for k <= N."""

    def __init__(self, F0: LinearizedSkewProduct, n_b, N):
        A = F0.base
        self.n_b, self.dim, self.N = n_b, A.dim, N
        self.nodes = np.indices((n_b,) * A.dim).reshape(A.dim, -1).T / n_b
        self.size = self.nodes.shape[0]
        self.perm = A.lattice_map(n_b)
        self.lam = F0.lam(self.nodes)
        orbit = np.empty((N + 2, self.size), dtype=np.int64)
        pi = np.empty((N + 2, self.size))
        orbit[0] = np.arange(self.size)
        pi[0] = 1.0
        for k in range(N + 1):
            orbit[k + 1] = self.perm[orbit[k]]
            pi[k + 1] = pi[k] * self.lam[orbit[k]]
        self.orbit = orbit
        self.pi = pi
        self.P = pi / self.lam[orbit]

    def truncated(self, N):
        if N > self.N:
            raise ValueError("lattice was built for a shorter depth")
        out = object.__new__(Lattice)
        out.__dict__.update(self.__dict__)
        out.N = N
        return out


class QuadraticTable:
    """Q at lattice nodes, as a per-node Chebyshev series in x on [0, x_hi].

    Used for families without a closed-form quadratic part, where each
    evaluation would otherwise need a quadrature.
    """

    def __init__(self, fiber, nodes, x_hi, tol=1e-14):
        self.fiber, self.nodes, self.x_hi = fiber, nodes, x_hi
        for deg in (16, 32, 64):
            t = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
            xs = 0.5 * x_hi * (t + 1.0)
            vals = quadratic_part(fiber, nodes[:, None, :], np.broadcast_to(xs, (len(nodes), deg + 1)))
            coef = np.polynomial.chebyshev.chebfit(t, vals.T, deg)  # (deg+1, R)
            scale = max(np.max(np.abs(coef)), 1.0)
            if np.max(np.abs(coef[-3:])) < tol * scale:
                break
        self.coef = coef

    def __call__(self, rows, x):
        x = np.asarray(x, dtype=float)
        inside = x <= self.x_hi
        t = 2.0 * np.minimum(x, self.x_hi) / self.x_hi - 1.0
        out = np.polynomial.chebyshev.chebval(t, self.coef[:, rows][:, :, None], tensor=False)
        if not np.all(inside):
            r = np.broadcast_to(np.asarray(rows)[:, None], x.shape)[~inside]
            out[~inside] = quadratic_part(self.fiber, self.nodes[r], x[~inside])
        return out


class Model:
    """Skew product restricted to the lattice: lam, orbit data and Q at nodes."""

    def __init__(self, F: SkewProduct, cfg: SolverConfig, epsilon, N, x_hi=None):
        self.F = F
        self.F0 = F.linearize()
        self.cfg = cfg
        self.epsilon = epsilon
        self.lattice = Lattice(self.F0, cfg.n_b, N)
        self.x = np.linspace(0.0, epsilon, cfg.n_x)
        fiber = F.fiber
        if fiber.closed_form_quadratic:
            self._table = None
        else:
            self._table = QuadraticTable(fiber, self.lattice.nodes, x_hi or min(1.0, 2.0 * epsilon))

    def Q(self, rows, x):
        if self._table is not None:
            return self._table(rows, x)
        return self.F.fiber.quadratic(self.lattice.nodes[rows][:, None, :], x)


def _blocks(size):
    return [(s, min(s + BLOCK_ROWS, size)) for s in range(0, size, BLOCK_ROWS)]


def _map_blocks(fn, size, workers):
    blocks = _blocks(size)
    if workers <= 1 or len(blocks) == 1:
        parts = [fn(lo, hi) for lo, hi in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda lh: fn(*lh), blocks))
    return np.concatenate(parts, axis=0)


def series(lattice: Lattice, source, x, weight_power=0, workers=1):
    """-sum_{k=0}^{N} P_k(b) Pi_k(b)^p S(A^k b, Pi_k(b) x) at every lattice row.

    ``source(rows, xs)`` evaluates S at lattice rows for an (R, m) array of
    fiber coordinates.  p = 0 is the homological operator L; p = l gives
    the l-th fiber derivative transport.
    """
    x = np.asarray(x, dtype=float)

    def block(lo, hi):
        acc = np.zeros((hi - lo, x.size))
        for k in range(lattice.N + 1):
            pi = lattice.pi[k, lo:hi, None]
            w = lattice.P[k, lo:hi, None]
            if weight_power:
                w = w * pi ** weight_power
            acc -= w * source(lattice.orbit[k, lo:hi], pi * x)
        return acc

    return _map_blocks(block, lattice.size, workers)


# -- sources ------------------------------------------------------------------

def closure_source(Q_eval, lattice):
    nodes = lattice.nodes

    def source(rows, xs):
        return np.broadcast_to(np.asarray(Q_eval(nodes[rows][:, None, :], xs), dtype=float), xs.shape)

    return source


def grid_source(g: GridFunction):
    def source(rows, xs):
        return g.eval_rows(rows, xs)

    return source


def shift_source(h: GridFunction, model: Model):
    """Phi h = (1 + x h)^2 Q(b, x + x^2 h), with h interpolated in x only."""

    def source(rows, xs):
        hv = h.eval_rows(rows, xs)
        arg = xs + xs * xs * hv
        if arg.min() < 0.0 or arg.max() > 1.0:
            bad = np.argwhere((arg < 0.0) | (arg > 1.0))[0]
            raise DomainEscapeError(
                f"shifted fiber argument {arg[tuple(bad)]:.6g} left [0, 1] at row {rows[bad[0]]}, "
                f"x = {xs[tuple(bad)]:.6g}; reduce epsilon"
            )
        one = 1.0 + xs * hv
        return one * one * model.Q(rows, arg)

    return source


# -- public operations ----------------------------------------------------------

def homological_solve(Q_eval, F0: LinearizedSkewProduct, cfg: SolverConfig, beta=1.0, epsilon=None):
    """Truncated series h = -sum_{k<=N} P_k(b) Q(F0^k(b, x)) on the solve grid.

    ``Q_eval`` is either a vectorized closure Q(b, x) or a GridFunction.
    Returns (h, info) with the truncation depth and tail bound in ``info``.
    """
    bounds, at = validate(F0, cfg, beta)
    eps = epsilon or cfg.epsilon or 0.1
    x = np.linspace(0.0, eps, cfg.n_x)
    nodes = np.indices((cfg.n_b,) * F0.base.dim).reshape(F0.base.dim, -1).T / cfg.n_b
    if isinstance(Q_eval, GridFunction):
        q_sup = Q_eval.c_norm()
    else:
        q_sup = float(np.max(np.abs(Q_eval(nodes[:, None, :], x[None, :]))))
    N = cfg.truncation_N or theory.truncation_depth(q_sup, bounds.q, bounds.D, cfg.tail_tol)
    lattice = Lattice(F0, cfg.n_b, N)
    src = grid_source(Q_eval) if isinstance(Q_eval, GridFunction) else closure_source(Q_eval, lattice)
    vals = series(lattice, src, x, workers=cfg.workers)
    info = {"N": N, "tail_bound": theory.tail_bound(q_sup, bounds.q, bounds.D, N),
            "q": bounds.q, "D": bounds.D, "q_sup": q_sup, "alpha_theta": at.to_dict()}
    return GridFunction.from_flat(vals, F0.base.dim, eps), info


def homological_residual(h: GridFunction, source_vals, lattice: Lattice, workers=1):
    """Node-wise lam^2 h(Ab, lam x) - lam h(b, x) - S(b, x), h interpolated in x."""
    x = h.x_nodes
    flat = h.flat()

    def block(lo, hi):
        lam = lattice.lam[lo:hi, None]
        image = lattice.perm[lo:hi]
        shifted = h.eval_rows(image, np.broadcast_to(lam * x, (hi - lo, x.size)))
        return lam * lam * shifted - lam * flat[lo:hi] - source_vals[lo:hi]

    return _map_blocks(block, lattice.size, workers)


def shift_apply(h: GridFunction, Q_eval, F: SkewProduct = None, cfg: SolverConfig = None):
    """Node-wise (1 + x h)^2 Q(b, x + x^2 h)."""
    b = h.b_nodes()[:, None, :]
    x = h.x_nodes[None, :]
    hv = h.flat()
    arg = x + x * x * hv
    if np.any(arg < 0.0) or np.any(arg > 1.0):
        i, j = np.argwhere((arg < 0.0) | (arg > 1.0))[0]
        raise DomainEscapeError(
            f"shifted fiber argument {arg[i, j]:.6g} left [0, 1] at node b = {b[i, 0].tolist()}, "
            f"x = {x[0, j]:.6g}; reduce epsilon"
        )
    return GridFunction.from_flat((1.0 + x * hv) ** 2 * Q_eval(b, arg), h.dim, h.epsilon)


def derivative_transport(h_l, l, F0: LinearizedSkewProduct, cfg: SolverConfig, smoothness_k=None, epsilon=None):
    """l-th fiber derivative of L h from h^(l): -sum P_k Pi_k^l h^(l)(F0^k)."""
    if l not in (1, 2):
        raise ValueError("derivative transport is available for l = 1, 2")
    if smoothness_k is not None and l > smoothness_k - 2:
        raise ValueError(f"l = {l} exceeds the available smoothness k - 2 = {smoothness_k - 2}")
    bounds, _ = validate(F0, cfg)
    eps = h_l.epsilon if isinstance(h_l, GridFunction) else (epsilon or cfg.epsilon or 0.1)
    x = np.linspace(0.0, eps, cfg.n_x)
    if isinstance(h_l, GridFunction):
        q_sup = h_l.c_norm()
    else:
        nodes = np.indices((cfg.n_b,) * F0.base.dim).reshape(F0.base.dim, -1).T / cfg.n_b
        q_sup = float(np.max(np.abs(h_l(nodes[:, None, :], x[None, :]))))
    N = cfg.truncation_N or theory.truncation_depth(q_sup, bounds.q, bounds.D, cfg.tail_tol)
    lattice = Lattice(F0, cfg.n_b, N)
    src = grid_source(h_l) if isinstance(h_l, GridFunction) else closure_source(h_l, lattice)
    vals = series(lattice, src, x, weight_power=l, workers=cfg.workers)
    return GridFunction.from_flat(vals, F0.base.dim, eps)


class Conjugacy:
    """H(b, x) = (b, x + x^2 h(b, x))."""

    def __init__(self, h: GridFunction):
        self.h = h

    def fiber(self, b, x):
        x = np.asarray(x, dtype=float)
        return x + x * x * self.h.eval(b, x)

    def __call__(self, b, x):
        return np.asarray(b, dtype=float), self.fiber(b, x)


def assemble_H(h: GridFunction) -> Conjugacy:
    return Conjugacy(h)


class SeriesConjugacy(Conjugacy):
    """H with h evaluated off the grid as one more application of L Phi.

    h(b, x) = -sum_k P_k(b) Phi h_grid(A^k b, Pi_k(b) x) is computed at
    the requested point, so the grid values enter only inside Phi, where
    they carry an extra factor of x.  At lattice nodes this reproduces the
    grid values up to the fixed-point tolerance.
    """

    def __init__(self, h: GridFunction, F: SkewProduct, N):
        super().__init__(h)
        self.F, self.F0, self.N = F, F.linearize(), N

    def _flatten(self, b, x):
        """Points as base rows (P, d) with fiber coordinates (P, m).

        When b is constant along the last axis (b of shape (..., 1, d)
        against a row of x values) the orbit is followed once per row.
        """
        b = np.asarray(b, dtype=float)
        x = np.asarray(x, dtype=float)
        d = b.shape[-1]
        shape = np.broadcast_shapes(b.shape[:-1], x.shape)
        if len(shape) >= 1 and b.ndim - 1 == len(shape) and b.shape[-2] == 1:
            rows = np.broadcast_to(b, shape[:-1] + (1, d)).reshape(-1, d)
            xs = np.broadcast_to(x, shape).reshape(rows.shape[0], shape[-1])
        else:
            rows = np.broadcast_to(b, shape + (d,)).reshape(-1, d)
            xs = np.broadcast_to(x, shape).reshape(-1, 1)
        return wrap(rows), xs, shape

    def _chunks(self, fn, b, x, n_out):
        rows, xs, shape = self._flatten(b, x)
        outs = [np.empty(xs.shape) for _ in range(n_out)]
        step = max(1, (1 << 16) // xs.shape[1])
        for lo in range(0, rows.shape[0], step):
            for out, part in zip(outs, fn(rows[lo:lo + step], xs[lo:lo + step])):
                out[lo:lo + step] = part
        return [o.reshape(shape) for o in outs]

    def _terms(self, bk, x, count):
        """Yield (lam_b0, P_k(b) Phi h(A^k b, Pi_k(b) x)) for k < count."""
        pi = np.ones((x.shape[0], 1))
        for _ in range(count):
            lam = self.F0.lam(bk)[:, None]
            y = pi * x
            hv = self.h.eval(bk[:, None, :], y)
            one = 1.0 + y * hv
            yield lam, pi / lam * one * one * self.F.fiber.quadratic(bk[:, None, :], y + y * hv * y)
            pi = pi * lam
            bk = self.F.base.apply(bk)

    def h_eval(self, b, x):
        def part(bk, x):
            return (-sum(t for _, t in self._terms(bk, x, self.N + 1)),)

        return self._chunks(part, b, x, 1)[0]

    def h_pair(self, b, x):
        """(h(b, x), h(Ab, lam_b x)) from a single orbit.

        P_k(b) = lam_b P_{k-1}(Ab) and Pi_k(b) x = Pi_{k-1}(Ab) lam_b x, so the
        second series is the first one shifted by one term and divided by lam_b.
        """
        def part(bk, x):
            acc = np.zeros(x.shape)
            lam0 = None
            for k, (lam, t) in enumerate(self._terms(bk, x, self.N + 2)):
                if k == 0:
                    lam0, first = lam, t
                acc += t
            return -(acc - t), -(acc - first) / lam0

        return self._chunks(part, b, x, 2)

    def fiber(self, b, x):
        x = np.asarray(x, dtype=float)
        return x + x * x * self.h_eval(b, x)


def series_conjugacy(h: GridFunction, F: SkewProduct, report: SolverReport) -> SeriesConjugacy:
    return SeriesConjugacy(h, F, report.truncation_N)


# -- Picard iteration -------------------------------------------------------------

class Solver:
    """State shared by the iterations of h -> L Phi h at a fixed epsilon."""

    def __init__(self, F: SkewProduct, cfg: SolverConfig, epsilon):
        self.F, self.cfg, self.epsilon = F, cfg, epsilon
        self.F0 = F.linearize()
        self.bounds, self.at = validate(self.F0, cfg, F.fiber.holder_beta)
        q, D = self.bounds.q, self.bounds.D
        x = np.linspace(0.0, epsilon, cfg.n_x)
        nodes = np.indices((cfg.n_b,) * F.base.dim).reshape(F.base.dim, -1).T / cfg.n_b
        self.q_sup = float(np.max(np.abs(F.fiber.quadratic(nodes[:, None, :], x[None, :]))))
        self.a_c = 2.0 * self.q_sup / (D * (1.0 - q))
        # ||Phi h||_C <= ||Q||_C (1 + eps A_C)^2 on the space N
        phi_sup = self.q_sup * (1.0 + epsilon * self.a_c) ** 2
        N = cfg.truncation_N or theory.truncation_depth(phi_sup, q, D, cfg.tail_tol)
        self.tail = theory.tail_bound(phi_sup, q, D, N)
        self.model = Model(F, cfg, epsilon, N, x_hi=min(1.0, epsilon * (1.0 + epsilon * self.a_c) * 1.05))

    def step(self, h: GridFunction) -> GridFunction:
        vals = series(self.model.lattice, shift_source(h, self.model), self.model.x, workers=self.cfg.workers)
        return h.with_values(vals)

    def zero(self):
        return GridFunction.zeros(self.F.base.dim, self.cfg.n_b, self.cfg.n_x, self.epsilon)

    def shift_nodes(self, h):
        rows = np.arange(self.model.lattice.size)
        return shift_source(h, self.model)(rows, np.broadcast_to(self.model.x, (rows.size, self.cfg.n_x)))


def _noise_floor(h):
    return 64 * np.finfo(float).eps * max(h.c_norm(), 1e-300)


def solve_conjugacy(F: SkewProduct, cfg: SolverConfig, n_params: SpaceNParams | None = None, h0=None):
    """Picard iteration from h0 = 0 until the sup-norm update drops below tolerance.

    Returns (h, report).  Raises DivergenceError after three consecutive
    update ratios above 1.
    """
    eps = cfg.epsilon if cfg.epsilon is not None else choose_epsilon(F, cfg)
    solver = Solver(F, cfg, eps)
    report = SolverReport(epsilon=eps, truncation_N=solver.model.lattice.N, tail_bound=solver.tail,
                          q=solver.bounds.q, D=solver.bounds.D, alpha_theta=solver.at.to_dict())
    h = h0 if h0 is not None else solver.zero()
    alpha = solver.at.alpha
    scales = holder_scales(cfg.n_b)
    params = n_params
    prev_delta, above_one = None, 0
    for it in range(1, cfg.max_iterations + 1):
        h_new = solver.step(h)
        delta = (h_new - h).c_norm()
        report.deltas.append(delta)
        if params is None:
            # A_C with factor-2 headroom; the other two from the first iterate
            lip = h_new.lipschitz_x()
            hol, _ = h_new.holder_norm(alpha, cfg.holder_pairs, scales, warn=False)
            params = SpaceNParams(solver.a_c, max(10 * lip, 1e-9), max(10 * hol, 1e-9))
            report.space_N = params.to_dict()
        c = h_new.c_norm()
        lip = h_new.lipschitz_x()
        hol, _ = h_new.holder_norm(alpha, cfg.holder_pairs, scales, warn=False)
        report.in_space_N.append({
            "iteration": it, "c_norm": c, "lip_x": lip, "holder": hol,
            "inside": bool(c <= params.a_c and lip <= params.a_lip and hol <= params.a_alpha),
        })
        h = h_new
        report.iterations = it
        report.final_delta = delta
        if prev_delta is not None and prev_delta > _noise_floor(h):
            ratio = delta / prev_delta
            report.contraction_estimates.append(ratio)
            above_one = above_one + 1 if ratio > 1.0 else 0
            if above_one >= 3:
                raise DivergenceError(
                    f"L Phi is not contracting at epsilon = {eps:g} (update ratios "
                    f"{report.contraction_estimates[-3:]}); try a smaller epsilon"
                )
        prev_delta = delta
        log.debug("iteration %d: delta = %.3e", it, delta)
        if delta < cfg.fixed_point_tol:
            report.converged = True
            break
    if not report.space_N:
        report.space_N = params.to_dict()
    once_more = solver.step(h)
    report.functional_residual = (once_more - h).c_norm()
    res = homological_residual(h, solver.shift_nodes(h), solver.model.lattice, cfg.workers)
    report.homological_residual = float(np.max(np.abs(res)))
    return h, report


def holder_scales(n_b):
    """Default dyadic scales 2^-3 .. 2^-7 that the grid resolves."""
    from .gridfn import DEFAULT_SCALES

    usable = tuple(s for s in DEFAULT_SCALES if s >= 1.0 / n_b)
    return usable or (DEFAULT_SCALES[0],)


def choose_epsilon(F: SkewProduct, cfg: SolverConfig, start=0.1, min_eps=1e-4, probe_iterations=4):
    """Halve epsilon from ``start`` until the first update ratios are all < 0.9."""
    eps = start
    while eps >= min_eps:
        try:
            solver = Solver(F, replace(cfg, epsilon=eps), eps)
            h, deltas = solver.zero(), []
            for _ in range(probe_iterations):
                h_new = solver.step(h)
                deltas.append((h_new - h).c_norm())
                h = h_new
            ratios = [b / a for a, b in zip(deltas, deltas[1:]) if a > _noise_floor(h)]
            if all(r < 0.9 for r in ratios):
                return eps
        except DomainEscapeError:
            pass
        eps /= 2
    raise DivergenceError(f"no epsilon >= {min_eps:g} gave a contracting iteration")
