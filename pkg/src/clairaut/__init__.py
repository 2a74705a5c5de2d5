"""Clairaut-Legendre transform of singular Lagrangians.

The package turns a Lagrangian ``L(q, v)`` with a possibly degenerate
velocity Hessian into a physical Hamiltonian on the restricted phase space
``(q^A, p_i)``, the degenerate-direction Hamiltonians ``h_a``, their
curvature ``F_ab`` and the F-bracket, and integrates the resulting
first-order system.
"""

from .analysis import IndexSplit, hessian, rank_at, split
from .brackets import PhasePoint, bracket_F, curvature_F, d_alpha, invert_F, poisson
from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import ClairautError
from .expr import SymbolTable, diff, evaluate, parse
from .kernel import BACKEND
from .transform import ClairautSystem

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ClairautError",
    "ClairautSystem",
    "DEFAULT_TOLERANCES",
    "IndexSplit",
    "PhasePoint",
    "SymbolTable",
    "Tolerances",
    "bracket_F",
    "curvature_F",
    "d_alpha",
    "diff",
    "evaluate",
    "hessian",
    "invert_F",
    "parse",
    "poisson",
    "rank_at",
    "split",
]
