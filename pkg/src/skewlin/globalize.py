"""Cut-function surgery making a locally contracting family globally contracting.

Near the fixed point (inside the ball K) the family is left untouched; away
from it (outside U) the fiber map is replaced by x -> x/2, and in between
the two are blended by a C^2 radial smoothstep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skew_product import FiberMapFamily, SkewProduct
from .torus import torus_distance, wrap


class GlobalizationError(ValueError):
    pass


def smoothstep(t):
    """Quintic 6t^5 - 15t^4 + 10t^3 clamped to [0, 1]; C^2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@dataclass(frozen=True)
class CutFunction:
    center: np.ndarray
    r_inner: float
    r_outer: float

    def __call__(self, b):
        r = torus_distance(b, self.center)
        return smoothstep((r - self.r_inner) / (self.r_outer - self.r_inner))

    def to_dict(self):
        return {"center": np.asarray(self.center).tolist(), "r_inner": self.r_inner,
                "r_outer": self.r_outer}


def build_cut(center, r_inner=0.1, r_outer=0.25):
    if not 0 < r_inner < r_outer < 0.5:
        raise ValueError(f"need 0 < r_inner < r_outer < 0.5, got {r_inner}, {r_outer}")
    center = wrap(np.asarray(center, dtype=float))
    center.setflags(write=False)
    return CutFunction(center, float(r_inner), float(r_outer))


class GlobalizedFamily(FiberMapFamily):
    """f~_b(x) = f_b(x) (1 - phi(b)) + (x / 2) phi(b).

    f~_b(1) = 1 - phi/2, so the family is not boundary preserving outside K;
    only [0, eps] matters to the solver.
    """

    name = "globalized"

    def __init__(self, inner: FiberMapFamily, phi: CutFunction):
        super().__init__(inner.dim, inner.smoothness_k, inner.holder_beta, inner.holder_constants)
        self.inner = inner
        self.phi = phi
        self.closed_form_quadratic = inner.closed_form_quadratic

    def value(self, b, x):
        phi = self.phi(b)
        x = np.asarray(x, dtype=float)
        return self.inner.value(b, x) * (1.0 - phi) + 0.5 * x * phi

    def deriv(self, b, x, order=1):
        if order == 0:
            return self.value(b, x)
        phi = self.phi(b)
        out = self.inner.deriv(b, x, order) * (1.0 - phi)
        return out + 0.5 * phi if order == 1 else out

    def multiplier(self, b):
        phi = self.phi(b)
        return self.inner.multiplier(b) * (1.0 - phi) + 0.5 * phi

    def quadratic(self, b, x):
        if self.inner.closed_form_quadratic:
            return self.inner.quadratic(b, x) * (1.0 - self.phi(b))
        return super().quadratic(b, x)

    def to_dict(self):
        return {**self.inner.to_dict(), "globalize": self.phi.to_dict()}


def _grid(n, d):
    return np.indices((n,) * d).reshape(d, -1).T / n


def globalize(F: SkewProduct, phi: CutFunction, verify_resolution=256):
    """Return the skew product with the blended fiber family.

    Checks on a verify_resolution^d grid that lam < 1 wherever phi < 1
    before, and that the blended multiplier is < 1 everywhere after.
    """
    d = F.base.dim
    pts = _grid(verify_resolution if d <= 2 else 32, d)
    phi_v = phi(pts)
    lam = F.fiber.multiplier(pts)
    bad = (phi_v < 1.0) & (lam >= 1.0)
    if np.any(bad):
        i = int(np.argmax(np.where(bad, lam, -np.inf)))
        raise GlobalizationError(
            f"lam_b = {lam[i]:.6g} >= 1 at b = {pts[i].tolist()} inside the cut region; "
            "the fixed point is not attracting there (invert the map first)"
        )
    G = SkewProduct(F.base, GlobalizedFamily(F.fiber, phi))
    lam_t = G.fiber.multiplier(pts)
    if np.any(lam_t >= 1.0):
        i = int(np.argmax(lam_t))
        raise GlobalizationError(f"globalized multiplier {lam_t[i]:.6g} >= 1 at b = {pts[i].tolist()}")
    return G
