"""Measured cocycle Holder norms against the printed and corrected bounds.

Writes out/bound_curves.csv with one row per (quantity, n, variant).

    python3 scripts/bound_curves.py --depth 10 --pairs 10000
"""

import argparse
import csv
from pathlib import Path

from skewlin import CAT_MAP, SkewProduct
from skewlin.analysis import check_bounds, measure_constants
from skewlin.skew_product import QuadraticFamily
from skewlin.theory import AlphaTheta


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="out/bound_curves.csv")
    args = p.parse_args()

    F = SkewProduct(CAT_MAP, QuadraticFamily())
    c = measure_constants(F, seed=args.seed)
    at = AlphaTheta.build(F.fiber.holder_beta, CAT_MAP.mu, c.q)
    print(f"q={c.q:.5f} D={c.D:.5f} alpha={at.alpha:.5f} theta={at.theta:.5f} C_lam={c.c_lam:.4f}")
    checks = check_bounds(F, at, args.depth, args.pairs, args.seed, constants=c)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "n", "variant", "theoretical", "measured", "passed"])
        for k in checks:
            w.writerow([k.name, k.n, k.variant, f"{k.theoretical:.6g}", f"{k.measured:.6g}", k.passed])
            flag = "" if k.passed else "  <-- above"
            print(f"{k.name:16s} n={k.n:2d} {k.variant:9s} bound={k.theoretical:10.4g} measured={k.measured:10.4g}{flag}")


if __name__ == "__main__":
    main()
