"""Functions on T^d x [0, eps] sampled on a periodic-in-b, uniform-in-x grid.

Node (i_1, ..., i_d, j) sits at b = (i_1, ..., i_d) / n_b and
x = j eps / (n_x - 1).  Between nodes values are multilinear.
"""

from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .torus import random_pairs_at_scale, torus_distance

DEFAULT_SCALES = tuple(2.0 ** -k for k in range(3, 8))


class DomainError(ValueError):
    pass


class SubgridScaleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NormReport:
    c_norm: float
    lip_x: float
    holder_alpha: float
    holder_norm: float
    n_pairs: int
    per_scale: tuple = field(default=())  # (scale, max ratio, max |difference|)

    def to_dict(self):
        return {
            "c_norm": self.c_norm, "lip_x": self.lip_x, "holder_alpha": self.holder_alpha,
            "holder_norm": self.holder_norm, "n_pairs": self.n_pairs,
            "per_scale": [list(row) for row in self.per_scale],
        }


def _snap(u):
    """Round grid coordinates within 1e-9 of an integer onto it, so node queries are exact."""
    r = np.rint(u)
    return np.where(np.abs(u - r) < 1e-9, r, u)


class GridFunction:
    def __init__(self, values, epsilon):
        values = np.array(values, dtype=float)
        if values.ndim < 2:
            raise ValueError("values need at least one base axis and the x axis")
        n_b = values.shape[0]
        if any(s != n_b for s in values.shape[:-1]):
            raise ValueError(f"base axes must have equal length, got {values.shape[:-1]}")
        if values.shape[-1] < 2:
            raise ValueError("need n_x >= 2")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        values.setflags(write=False)
        self.values = values
        self.epsilon = float(epsilon)
        self.dim = values.ndim - 1
        self.n_b = n_b
        self.n_x = values.shape[-1]

    @property
    def dx(self):
        return self.epsilon / (self.n_x - 1)

    @property
    def x_nodes(self):
        return np.linspace(0.0, self.epsilon, self.n_x)

    def b_nodes(self):
        """Base nodes as an (n_b^d, d) array in C order."""
        return np.indices((self.n_b,) * self.dim).reshape(self.dim, -1).T / self.n_b

    def flat(self):
        """Values as (n_b^d, n_x), rows in C order of the base multi-index."""
        return self.values.reshape(-1, self.n_x)

    @classmethod
    def zeros(cls, dim, n_b, n_x, epsilon):
        return cls(np.zeros((n_b,) * dim + (n_x,)), epsilon)

    @classmethod
    def from_flat(cls, flat, dim, epsilon):
        flat = np.asarray(flat)
        n_b = round(flat.shape[0] ** (1.0 / dim))
        return cls(flat.reshape((n_b,) * dim + (flat.shape[1],)), epsilon)

    @classmethod
    def from_function(cls, fn, dim, n_b, n_x, epsilon):
        """Sample fn(b, x) (vectorized, b of shape (..., d)) at every node."""
        b = np.indices((n_b,) * dim).reshape(dim, -1).T / n_b
        x = np.linspace(0.0, epsilon, n_x)
        vals = np.asarray(fn(b[:, None, :], x[None, :]), dtype=float)
        vals = np.broadcast_to(vals, (b.shape[0], n_x))
        return cls.from_flat(vals, dim, epsilon)

    def with_values(self, values):
        return GridFunction(np.asarray(values).reshape(self.values.shape), self.epsilon)

    def __sub__(self, other):
        return self.with_values(self.values - other.values)

    def __add__(self, other):
        return self.with_values(self.values + other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    # -- evaluation -----------------------------------------------------------

    def _x_cell(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > self.epsilon + 1e-12):
            raise DomainError(f"x outside [0, {self.epsilon}]")
        u = _snap(np.clip(x, 0.0, self.epsilon) / self.dx)
        j = np.floor(u).astype(np.int64)  # j = n_x - 1 only at x = eps, where the weight is 0
        return j, u - j

    def eval(self, b, x):
        """Multilinear interpolation, periodic in b and linear in x.

        Evaluated as nested lerps a + (c - a) t, so node values and
        constant functions are reproduced exactly.
        """
        b = np.asarray(b, dtype=float)
        if b.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        j, s = self._x_cell(x)
        n, nx = self.n_b, self.n_x
        flat = self.values.reshape(-1)
        # per axis: flat offsets of the lower and upper neighbour and the weight t
        axes = []
        stride = nx
        for axis in reversed(range(self.dim)):
            u = _snap(b[..., axis] * n)
            i0 = np.floor(u)
            t = u - i0
            i0 = i0.astype(np.int64) % n
            axes.append((i0 * stride, ((i0 + 1) % n) * stride, t))
            stride *= n
        axes.append((j, np.minimum(j + 1, nx - 1), s))
        # gather corners with the x axis varying fastest, then fold axes from the last
        corners = []
        for bits in itertools.product((0, 1), repeat=len(axes)):
            idx = 0
            for bit, (lo, hi, _) in zip(bits, axes):
                idx = idx + (hi if bit else lo)
            corners.append(flat.take(idx))
        for _, _, t in reversed(axes):
            corners = [a + (c - a) * t for a, c in zip(corners[::2], corners[1::2])]
        return corners[0]

    def eval_rows(self, rows, x):
        """Interpolate in x only, at base nodes given by flat row indices.

        ``rows`` has shape (R,) and ``x`` shape (R, m); returns (R, m).
        """
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < -1e-12 or x.max() > self.epsilon + 1e-12):
            raise DomainError(f"x outside [0, {self.epsilon}]")
        u = np.clip(x, 0.0, self.epsilon) * ((self.n_x - 1) / self.epsilon)
        j = np.minimum(u.astype(np.int64), self.n_x - 2)
        s = u - j
        idx = j + (np.asarray(rows, dtype=np.int64) * self.n_x)[:, None]
        flat = self.values.reshape(-1)
        lo = flat.take(idx)
        return lo + (flat.take(idx + 1) - lo) * s

    # -- norms ----------------------------------------------------------------

    def c_norm(self):
        return float(np.max(np.abs(self.values)))

    def lipschitz_x(self):
        return float(np.max(np.abs(np.diff(self.values, axis=-1)))) / self.dx

    def holder_norm(self, alpha, n_pairs=2000, scales=DEFAULT_SCALES, seed=0, warn=True):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        spacing = 1.0 / self.n_b
        x = self.x_nodes
        rows, best = [], 0.0
        for k, s in enumerate(scales):
            if not s < 0.5:
                raise ValueError("scales must be < 0.5")
            if s < spacing and warn:
                warnings.warn(
                    f"scale {s:g} is below the grid spacing {spacing:g}; interpolation hides sub-grid variation",
                    SubgridScaleWarning, stacklevel=2,
                )
            rng = np.random.default_rng([seed, k])
            b1, b2 = random_pairs_at_scale(rng, n_pairs, self.dim, s)
            dist = torus_distance(b1, b2)
            diff = np.abs(self.eval(b1[:, None, :], x[None, :]) - self.eval(b2[:, None, :], x[None, :]))
            ratio = float(np.max(diff.max(axis=1) / dist ** alpha))
            rows.append((float(s), ratio, float(diff.max())))
            best = max(best, ratio)
        return best, tuple(rows)

    def norms(self, alpha, n_pairs=2000, scales=DEFAULT_SCALES, seed=0):
        hn, rows = self.holder_norm(alpha, n_pairs, scales, seed)
        return NormReport(self.c_norm(), self.lipschitz_x(), alpha, hn, n_pairs, rows)

    # -- serialization --------------------------------------------------------

    def meta(self):
        return {"shape": list(self.values.shape), "epsilon": self.epsilon, "n_b": self.n_b,
                "n_x": self.n_x, "dim": self.dim, "dtype": "<f8", "order": "C"}

    def save_binary(self, path):
        path = Path(path)
        path.write_bytes(self.values.astype("<f8").tobytes(order="C"))
        meta_path = path.with_suffix(".meta.json")
        meta_path.write_text(json.dumps(self.meta(), indent=2) + "\n")
        return path, meta_path

    @classmethod
    def load_binary(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        vals = np.frombuffer(path.read_bytes(), dtype=meta["dtype"]).reshape(meta["shape"])
        return cls(vals, meta["epsilon"])

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# epsilon={self.epsilon!r} n_b={self.n_b} n_x={self.n_x} dim={self.dim}\n")
            w = csv.writer(fh)
            w.writerow([f"i{a + 1}" for a in range(self.dim)] + ["j", "value"])
            for idx in np.ndindex(self.values.shape):
                w.writerow(list(idx) + [format(self.values[idx], ".17g")])
        return path

    @classmethod
    def load_csv(cls, path):
        with open(path) as fh:
            header = dict(item.split("=") for item in fh.readline()[1:].split())
            dim, n_b, n_x = int(header["dim"]), int(header["n_b"]), int(header["n_x"])
            vals = np.empty((n_b,) * dim + (n_x,))
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                vals[tuple(int(v) for v in row[:-1])] = float(row[-1])
        return cls(vals, float(header["epsilon"]))
