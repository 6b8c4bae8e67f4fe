"""Fiberwise linearization of skew products over hyperbolic toral automorphisms."""

from .torus import CAT_MAP, ToralAutomorphism, torus_distance
from .skew_product import (
    ExpressionFamily,
    LinearizedSkewProduct,
    MobiusFamily,
    QuadraticFamily,
    SkewProduct,
)
from .gridfn import GridFunction
from .operators import SolverConfig, assemble_H, homological_solve, solve_conjugacy

__version__ = "0.1.0"
