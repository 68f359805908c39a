"""Sparse NLP container and the bundled primal-dual interior-point solver."""
from .problem import (
    DerivativeReport,
    NlpSolution,
    SolveStatus,
    SolverOptions,
    SparseNlp,
    check_derivatives,
    relax_equalities,
)
from .ipm import InteriorPointSolver, solve

__all__ = [
    "SparseNlp",
    "NlpSolution",
    "SolveStatus",
    "SolverOptions",
    "DerivativeReport",
    "check_derivatives",
    "relax_equalities",
    "InteriorPointSolver",
    "solve",
]
