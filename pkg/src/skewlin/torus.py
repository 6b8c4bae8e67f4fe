"""Hyperbolic automorphisms of the torus T^d = R^d / Z^d.

Points are arrays whose last axis holds the d coordinates, so every
function here accepts either a single point of shape (d,) or a batch of
shape (..., d).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

HYPERBOLIC_GAP = 1e-9


def wrap(coords):
    """Reduce coordinates mod 1 onto [0, 1)."""
    c = np.asarray(coords, dtype=float)
    r = c - np.floor(c)
    # floor can round x - floor(x) up to exactly 1.0 for tiny negative x
    return np.where(r >= 1.0, 0.0, r)


@dataclass(frozen=True)
class ToralAutomorphism:
    matrix: np.ndarray
    mu: float = field(init=False)
    dim: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"base matrix must be square, got shape {m.shape}")
        if not np.all(np.equal(np.round(m), m)):
            raise ValueError("base matrix must have integer entries")
        m = np.round(m).astype(np.int64)
        det = round(np.linalg.det(m))
        if abs(det) != 1:
            raise ValueError(f"|det A| must be 1, got {det}")
        mags = np.abs(np.linalg.eigvals(m.astype(float)))
        if np.any(np.abs(mags - 1.0) <= HYPERBOLIC_GAP):
            raise ValueError(
                f"matrix is not hyperbolic: eigenvalue magnitudes {mags.tolist()}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "mu", float(mags.max()))
        object.__setattr__(self, "dim", m.shape[0])

    def __eq__(self, other):
        return isinstance(other, ToralAutomorphism) and np.array_equal(
            self.matrix, other.matrix
        )

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def _check(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[-1:] != (self.dim,):
            raise ValueError(
                f"point dimension {b.shape[-1:]} does not match base dimension {self.dim}"
            )
        return b

    def apply(self, b):
        b = self._check(b)
        return wrap(b @ self.matrix.T)

    def iterate(self, b, k):
        if k < 0:
            raise ValueError("iteration count must be non-negative")
        b = wrap(self._check(b))
        for _ in range(k):
            b = self.apply(b)
        return b

    def lattice_map(self, n):
        """Index permutation of the lattice (Z/n)^d induced by A.

        Returns an int array ``perm`` with ``perm[flat(i)] = flat(A i mod n)``
        for C-ordered flat indices.  A maps the lattice i/n onto itself
        exactly, which is what lets the solver follow orbits without
        interpolating in the base.
        """
        idx = np.indices((n,) * self.dim).reshape(self.dim, -1).T
        image = (idx @ self.matrix.T) % n
        return np.ravel_multi_index(image.T, (n,) * self.dim)

    def to_dict(self):
        return {"matrix": self.matrix.tolist()}


CAT_MAP = ToralAutomorphism(np.array([[2, 1], [1, 1]]))


def apply(A: ToralAutomorphism, b):
    return A.apply(b)


def iterate(A: ToralAutomorphism, b, k: int):
    return A.iterate(b, k)


def spectral_radius(A: ToralAutomorphism) -> float:
    return A.mu


def torus_distance(b1, b2):
    """Quotient Euclidean distance: min over integer shifts of |b1 - b2 + n|."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1.shape[-1] != b2.shape[-1]:
        raise ValueError("points have different dimensions")
    diff = wrap(b1 - b2)
    diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def torus_distance_bruteforce(b1, b2):
    """Reference distance enumerating all 3^d neighbouring shifts."""
    b1 = np.asarray(b1, dtype=float) % 1.0
    b2 = np.asarray(b2, dtype=float) % 1.0
    d = b1.shape[-1]
    best = np.inf
    for shift in itertools.product((-1, 0, 1), repeat=d):
        best = min(best, float(np.linalg.norm(b1 - b2 - np.array(shift))))
    return best


def random_points(rng, n, d):
    return rng.random((n, d))


def random_pairs_at_scale(rng, n, d, scale, spread=0.2):
    """Random pairs (b1, b2) whose torus distance lies in scale*(1 +- spread).

    Valid for scale < 0.5, where a straight displacement of that length is
    also the shortest one.
    """
    b1 = rng.random((n, d))
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    length = scale * rng.uniform(1.0 - spread, 1.0 + spread, size=(n, 1))
    b2 = wrap(b1 + length * direction)
    return b1, b2
