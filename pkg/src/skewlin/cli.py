"""Batch front end: JSON config in, report.json and grid/CSV dumps out.

    skewlin linearize configs/mobius_example.json

Exit status: 0 ok, 2 invalid configuration, 3 solver divergence,
4 bound-check failure (only with --strict).  Errors are also written to
stderr as one-line JSON diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import analysis, theory
from .expr import ExprError
from .globalize import GlobalizationError, build_cut, globalize
from .gridfn import DEFAULT_SCALES, DomainError, GridFunction
from .operators import (
    ConfigError,
    DivergenceError,
    DomainEscapeError,
    Solver,
    SolverConfig,
    SeriesConjugacy,
    solve_conjugacy,
    validate,
)
from .skew_product import (
    ExpressionFamily,
    MobiusFamily,
    ModelViolationError,
    QuadraticFamily,
    SkewProduct,
    solver_bounds,
)
from .torus import ToralAutomorphism

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_BOUNDS = 0, 2, 3, 4


@dataclass
class AnalysisConfig:
    scales: list = field(default_factory=lambda: list(DEFAULT_SCALES))
    holder_pairs: int = 10_000
    bound_pairs: int = 10_000
    depth: int = 10
    residual_random: int = 10_000
    slack: float = 0.10


@dataclass
class RunConfig:
    base: list = field(default_factory=lambda: [[2, 1], [1, 1]])
    family: dict = field(default_factory=lambda: {"family": "quadratic"})
    globalize: dict | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output_dir: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            d["solver"] = SolverConfig(**d.get("solver", {}))
            d["analysis"] = AnalysisConfig(**d.get("analysis", {}))
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def effective(self):
        """Config as embedded in the report: everything that can change a number.

        The worker count and output directory are left out so that reports
        from different worker counts or directories compare byte for byte.
        """
        d = self.to_dict()
        d.pop("output_dir")
        d["solver"].pop("workers")
        return d


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return RunConfig.from_dict(raw)


def apply_overrides(cfg: RunConfig, args):
    solver = {
        "tail_tol": args.tail_tol, "fixed_point_tol": args.fp_tol, "max_iterations": args.max_iter,
        "epsilon": args.epsilon, "alpha": args.alpha, "n_b": args.nb, "n_x": args.nx,
        "workers": args.workers,
    }
    solver = {k: v for k, v in solver.items() if v is not None}
    if solver:
        cfg = replace(cfg, solver=replace(cfg.solver, **solver))
    if args.globalize or args.r_inner is not None or args.r_outer is not None or args.center is not None:
        g = dict(cfg.globalize or {})
        for key, val in (("r_inner", args.r_inner), ("r_outer", args.r_outer), ("center", args.center)):
            if val is not None:
                g[key] = val
        cfg = replace(cfg, globalize=g)
    if args.output_dir is not None:
        cfg = replace(cfg, output_dir=args.output_dir)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


# -- model construction ---------------------------------------------------------

FAMILY_KEYS = {
    "quadratic": {"q0", "q1", "c0", "c1", "pin_top"},
    "mobius": {"lam", "m"},
    "custom": {"expression"},
}


def build_family(params, dim):
    params = dict(params)
    kind = params.pop("family", None)
    if kind not in FAMILY_KEYS:
        raise ConfigError(f"family must be one of {sorted(FAMILY_KEYS)}, got {kind!r}")
    beta = params.pop("beta", 1.0)
    k = params.pop("k", None)
    extra = set(params) - FAMILY_KEYS[kind]
    if extra:
        raise ConfigError(f"unknown parameters for family {kind!r}: {sorted(extra)}")
    if not 0 < beta <= 1:
        raise ConfigError("beta must lie in (0, 1]")
    common = {"dim": dim, "holder_beta": beta}
    if k is not None:
        if k < 2:
            raise ConfigError("smoothness k must be >= 2")
        common["smoothness_k"] = k
    if kind == "quadratic":
        return QuadraticFamily(**params, **common)
    if kind == "mobius":
        return MobiusFamily(**params, **common)
    if "expression" not in params:
        raise ConfigError("custom family needs an 'expression'")
    fam = ExpressionFamily(params["expression"], **common)
    defect = np.max(np.abs(fam.value(np.zeros((1, dim)), np.zeros(1))))
    if defect > 1e-12:
        raise ConfigError(f"custom family must fix x = 0, got f_0(0) = {defect:.3g}")
    return fam


def build_model(cfg: RunConfig):
    try:
        base = ToralAutomorphism(cfg.base)
        fiber = build_family(cfg.family, base.dim)
        F = SkewProduct(base, fiber)
    except (ExprError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if cfg.globalize is not None:
        g = cfg.globalize
        try:
            phi = build_cut(g.get("center", [0.0] * base.dim), g.get("r_inner", 0.1), g.get("r_outer", 0.25))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        F = globalize(F, phi)
    return F


def b_independent(F):
    fam = F.fiber
    if isinstance(fam, MobiusFamily):
        return True
    if isinstance(fam, QuadraticFamily):
        return fam.q1 == 0 and fam.c1 == 0
    if isinstance(fam, ExpressionFamily):
        return not any(fam.expr.depends_on(f"b{i + 1}") for i in range(fam.dim))
    return False


def oracle_error(F, h: GridFunction):
    """Sup error of H against an independent oracle, or None if there is none."""
    x = h.x_nodes
    if isinstance(F.fiber, MobiusFamily):
        return float(np.max(np.abs(h.flat() - F.fiber.normalized_conjugacy(x)[None, :])))
    if not b_independent(F):
        return None
    b0 = np.zeros((1, F.base.dim))
    try:
        H_ref = analysis.koenigs_oracle(lambda y: F.fiber.value(b0, y).reshape(np.shape(y)), x)
    except analysis.OracleError:
        return None
    H = x + x * x * h.flat()
    return float(np.max(np.abs(H - H_ref[None, :])))


# -- output ------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)) or v is None:
        v = None if v is None else bool(v)
        return json.dumps(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else json.dumps(str(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps(obj):
    """JSON with every float written to 17 significant digits."""
    return _fmt(obj) + "\n"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


def write_bounds(path, checks):
    write_csv(path, ["name", "n", "variant", "theoretical", "measured", "slack", "passed"],
              [(c.name, c.n, c.variant, c.theoretical, c.measured, c.slack, c.passed) for c in checks])


def write_holder(path, est):
    write_csv(path, ["scale", "max_diff", "max_ratio"], est.table)


# -- subcommands -------------------------------------------------------------------

def _solve(F, cfg: RunConfig, out: Path, report):
    h, rep = solve_conjugacy(F, cfg.solver)
    h.save_csv(out / "h.csv")
    h.save_binary(out / "h.bin")
    report["solver"] = rep.to_dict()
    return h, rep


def _load_or_solve(F, cfg, out, report):
    """(h, AlphaTheta, truncation depth), reusing h.bin from an earlier run when it matches."""
    path = out / "h.bin"
    if path.exists():
        h = GridFunction.load_binary(path)
        if h.n_b == cfg.solver.n_b and h.n_x == cfg.solver.n_x and h.dim == F.base.dim:
            report["h_source"] = "loaded"
            solver = Solver(F, replace(cfg.solver, epsilon=h.epsilon), h.epsilon)
            return h, solver.at, solver.model.lattice.N
    h, rep = _solve(F, cfg, out, report)
    report["h_source"] = "solved"
    return h, theory.AlphaTheta(**rep.alpha_theta), rep.truncation_N


def _residual(F, h, N, cfg):
    return analysis.conjugacy_residual(F, SeriesConjugacy(h, F, N), seed=cfg.seed,
                                       n_random=cfg.analysis.residual_random)


def cmd_linearize(F, cfg, out, report):
    h, rep = _solve(F, cfg, out, report)
    res = _residual(F, h, rep.truncation_N, cfg)
    report["conjugacy_residual"] = res.sup
    report["residual"] = res.to_dict()
    report["oracle_error"] = oracle_error(F, h)
    return EXIT_OK if rep.converged else EXIT_DIVERGED


def _holder(h, at, cfg):
    scales = [s for s in cfg.analysis.scales if s >= 1.0 / h.n_b]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return analysis.estimate_holder(h, at, scales, cfg.analysis.holder_pairs, cfg.seed)


def cmd_holder(F, cfg, out, report):
    h, at, _ = _load_or_solve(F, cfg, out, report)
    est = _holder(h, at, cfg)
    report["holder"] = est.to_dict()
    write_holder(out / "holder_table.csv", est)
    return EXIT_OK


def cmd_verify(F, cfg, out, report, strict=False):
    h, at, N = _load_or_solve(F, cfg, out, report)
    a = cfg.analysis
    res = _residual(F, h, N, cfg)
    est = _holder(h, at, cfg)
    consts = analysis.measure_constants(F, n_b=cfg.solver.n_b, seed=cfg.seed)
    small = replace(cfg.solver, n_b=16, n_x=9, epsilon=h.epsilon)
    checks = analysis.check_bounds(F, at, a.depth, a.bound_pairs, cfg.seed, a.slack, consts, small)
    bounds = solver_bounds(F.linearize(), cfg.solver.n_b)
    report["verification"] = analysis.VerificationReport(
        res.sup, res.to_dict(), oracle_error(F, h), est.to_dict(), [c.to_dict() for c in checks],
        consts.to_dict(), analysis.narrow_band_check(F.linearize(), bounds),
    ).to_dict()
    write_holder(out / "holder_table.csv", est)
    write_bounds(out / "bounds.csv", checks)
    failed = [c for c in analysis.required_checks(checks) if not c.passed]
    report["bound_failures"] = len(failed)
    return EXIT_BOUNDS if strict and failed else EXIT_OK


def cmd_constants(F, cfg, out, report):
    F0 = F.linearize()
    bounds, at = validate(F0, cfg.solver, F.fiber.holder_beta)
    q, D = bounds.q, bounds.D
    consts = analysis.measure_constants(F, n_b=cfg.solver.n_b, seed=cfg.seed)
    L_C, L_alpha, L_lip = theory.homological_holder_constants(consts.c_lam, at, D)
    table = {
        "mu": at.mu, "q": q, "D": D, "alpha_max": at.alpha_max, "alpha": at.alpha, "theta": at.theta,
        "L_C_norm_bound": theory.homological_norm_bound(q, D),
        "lip_transport_bound": theory.lipschitz_transport_bound(q, D),
        "derivative_transport_bound_l1": theory.derivative_transport_bound(q, D, 1),
        "derivative_transport_bound_l2": theory.derivative_transport_bound(q, D, 2),
        "B": theory.B_constant(at), "L_C": L_C, "L_alpha": L_alpha, "L_Lip": L_lip,
        "c_lam": consts.c_lam, "c_q": consts.c_q, "lip_x_q": consts.lip_x_q,
        "narrow_band": analysis.narrow_band_check(F0, bounds),
    }
    report["constants"] = table
    for k, v in table.items():
        print(f"{k:32s} {format(v, '.17g') if isinstance(v, float) else v}")
    return EXIT_OK


def cmd_globalize_only(F, cfg, out, report):
    if cfg.globalize is None:
        raise ConfigError("globalize-only needs a globalize block or --globalize")
    n = 256
    pts = np.indices((n,) * F.base.dim).reshape(F.base.dim, -1).T / n
    lam = F.fiber.multiplier(pts)
    inside = F.fiber.phi(pts) == 0.0
    x = np.linspace(0.0, 1.0, 9)
    diff = np.abs(F.fiber.value(pts[inside][:, None, :], x) - F.fiber.inner.value(pts[inside][:, None, :], x))
    report["globalization"] = {
        "cut": F.fiber.phi.to_dict(), "grid": n, "max_multiplier": float(lam.max()),
        "max_inner_defect": float(diff.max()) if diff.size else 0.0,
    }
    return EXIT_OK


COMMANDS = {
    "linearize": cmd_linearize, "verify": cmd_verify, "holder": cmd_holder,
    "constants": cmd_constants, "globalize-only": cmd_globalize_only,
}


def build_parser():
    p = argparse.ArgumentParser(prog="skewlin", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config")
    p.add_argument("--output-dir", "-o")
    p.add_argument("--seed", type=int)
    p.add_argument("--globalize", action="store_true")
    p.add_argument("--r-inner", type=float)
    p.add_argument("--r-outer", type=float)
    p.add_argument("--center", type=float, nargs="+")
    p.add_argument("--tail-tol", type=float)
    p.add_argument("--fp-tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nb", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--strict", action="store_true", help="exit 4 if a required bound check fails")
    p.add_argument("--timestamp", action="store_true", help="add a wall-clock timestamp (breaks byte-identity)")
    return p


def diagnose(code, err):
    sys.stderr.write(json.dumps({"exit_code": code, "error": type(err).__name__, "message": str(err)}) + "\n")
    return code


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        F = build_model(cfg)
        validate(F.linearize(), cfg.solver, F.fiber.holder_beta, cfg.globalize is not None)
    except (ConfigError, GlobalizationError) as e:
        return diagnose(EXIT_CONFIG, e)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"command": args.command, "config": cfg.effective()}
    if args.timestamp:
        report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        if args.command == "verify":
            status = cmd_verify(F, cfg, out, report, args.strict)
        else:
            status = COMMANDS[args.command](F, cfg, out, report)
    except (ConfigError, GlobalizationError, DomainError) as e:
        return diagnose(EXIT_CONFIG, e)
    except (DivergenceError, DomainEscapeError, ModelViolationError) as e:
        return diagnose(EXIT_DIVERGED, e)
    report["exit_code"] = status
    (out / "report.json").write_text(dumps(report))
    if status == EXIT_BOUNDS:
        diagnose(status, RuntimeError(f"{report['bound_failures']} required bound checks failed"))
    elif status == EXIT_DIVERGED:
        diagnose(status, DivergenceError("iteration limit reached without convergence"))
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
