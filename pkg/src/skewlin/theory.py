"""Closed-form constants: exponent choice, contraction factor and norm bounds.

Where a printed constant is inconsistent with its own derivation two
variants are provided: ``printed`` evaluates the formula literally and
``corrected`` uses the factor the derivation actually yields (1/D in
place of D, since D is a lower bound on the multiplier).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

ALPHA_FRACTION = 0.9


def alpha_max(beta, mu, q):
    """Supremum of admissible Holder exponents: min(beta, log(1/q) / log(mu))."""
    return min(beta, math.log(1.0 / q) / math.log(mu))


@dataclass(frozen=True)
class AlphaTheta:
    beta: float
    mu: float
    q: float
    alpha_max: float
    alpha: float
    theta: float

    @classmethod
    def build(cls, beta, mu, q, alpha=None):
        amax = alpha_max(beta, mu, q)
        if alpha is None:
            alpha = ALPHA_FRACTION * amax
        return cls(beta, mu, q, amax, float(alpha), mu ** alpha * q)

    @property
    def valid(self):
        return 0 < self.alpha < self.alpha_max and self.theta < 1.0

    def to_dict(self):
        return asdict(self)


def tail_bound(q_sup, q, D, N):
    """Sup of the discarded terms k > N of the homological series."""
    return q_sup * q ** (N + 1) / (D * (1.0 - q))


def truncation_depth(q_sup, q, D, tail_tol, lo=8, hi=200):
    if q_sup <= 0:
        return lo
    n = math.ceil(math.log(tail_tol * D * (1.0 - q) / q_sup) / math.log(q)) - 1
    return max(lo, min(hi, n))


def homological_norm_bound(q, D):
    """||L||_C <= 1 / (D (1 - q))."""
    return 1.0 / (D * (1.0 - q))


def lipschitz_transport_bound(q, D):
    """Lip_x(L h) <= Lip_x(h) / (D (1 - q^2))."""
    return 1.0 / (D * (1.0 - q * q))


def derivative_transport_bound(q, D, l):
    """||(L h)^(l)||_C <= ||h^(l)||_C / (D (1 - q^(l+1)))."""
    return 1.0 / (D * (1.0 - q ** (l + 1)))


def pi_holder_bound(c_lam, at: AlphaTheta, n):
    """||Pi_n||_[alpha] <= C_lam theta^n / ((mu^alpha - 1) q)."""
    return c_lam * at.theta ** n / ((at.mu ** at.alpha - 1.0) * at.q)


def B_constant(at: AlphaTheta):
    return at.theta / ((at.mu ** at.alpha - 1.0) * at.q) + 2.0


def p_holder_bound(c_lam, at: AlphaTheta, D, n, variant="corrected"):
    """||P_n||_[alpha] <= C_lam B theta^n times D^2 (printed) or 1/D^2 (corrected)."""
    factor = D * D if variant == "printed" else 1.0 / (D * D)
    return factor * c_lam * B_constant(at) * at.theta ** n


def theta2_holder_bound(c_q, lip_x_q, c_lam, at: AlphaTheta, D, k, variant="corrected"):
    """||theta_{2,k}||_[alpha] <= theta^k (C_Q + q^(k-1) Lip_x Q C_lam / (mu^alpha - 1)) times D or 1/D."""
    factor = D if variant == "printed" else 1.0 / D
    return at.theta ** k * factor * (c_q + at.q ** (k - 1) * lip_x_q * c_lam / (at.mu ** at.alpha - 1.0))


def homological_holder_constants(c_lam, at: AlphaTheta, D):
    """(L_C, L_[alpha], L_Lip) of the Holder estimate for L, as printed."""
    B = B_constant(at)
    return (
        D * D * c_lam * B / (1.0 - at.theta),
        D / (1.0 - at.theta),
        c_lam / ((at.mu ** at.alpha - 1.0) * at.q) / (1.0 - at.theta * at.q),
    )
