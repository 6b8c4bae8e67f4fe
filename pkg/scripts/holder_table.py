"""Per-scale maxima of |h(b1, x) - h(b2, x)| for the converged quadratic h.

    python3 scripts/holder_table.py --nb 128
"""

import argparse

from skewlin import CAT_MAP, SkewProduct, SolverConfig, solve_conjugacy
from skewlin.analysis import estimate_holder
from skewlin.skew_product import QuadraticFamily
from skewlin.theory import AlphaTheta


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--nb", type=int, default=64)
    p.add_argument("--pairs", type=int, default=10_000)
    args = p.parse_args()

    F = SkewProduct(CAT_MAP, QuadraticFamily())
    h, rep = solve_conjugacy(F, SolverConfig(epsilon=0.05, n_b=args.nb, n_x=args.nb // 2 + 1))
    at = AlphaTheta(**rep.alpha_theta)
    scales = [2.0 ** -k for k in range(2, 10) if 2.0 ** -k >= 1 / args.nb]
    est = estimate_holder(h, at, scales, args.pairs)
    print(f"alpha = {at.alpha:.4f}, alpha_hat = {est.label}")
    print(f"{'scale':>10s} {'max diff':>12s} {'ratio':>12s}")
    for s, m, r in est.table:
        print(f"{s:10.5f} {m:12.4e} {r:12.4e}")


if __name__ == "__main__":
    main()
