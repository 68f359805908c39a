"""Problem container, options and solution types for the sparse NLP layer.

The solver consumes problems of the form

    min f(x)   s.t.  c_eq(x) = 0,  c_ineq(x) <= 0,  lower <= x <= upper,

with callbacks returning dense gradients and scipy.sparse Jacobians.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    ACCEPTABLE = "acceptable"      # stalled, but KKT error below the acceptable tolerance
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SparseNlp:
    """Smooth NLP with sparse first and (optionally) second derivatives.

    ``lagrangian_hessian(x, obj_weight, y_eq, y_ineq)`` must return the sparse
    symmetric matrix ``obj_weight * H_f + sum_r y_r * H_{c_r}``. When omitted
    the solver falls back to a diagonal model and leans on its inertia
    regularization, which is slow but safe.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    num_eq: int = 0
    eq_residual: Callable[[np.ndarray], np.ndarray] | None = None
    eq_jacobian: Callable[[np.ndarray], sp.spmatrix] | None = None
    num_ineq: int = 0
    ineq_residual: Callable[[np.ndarray], np.ndarray] | None = None
    ineq_jacobian: Callable[[np.ndarray], sp.spmatrix] | None = None
    lagrangian_hessian: Callable[..., sp.spmatrix] | None = None
    name: str = "nlp"

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        for arr, label in ((self.lower, "lower"), (self.upper, "upper"), (self.x0, "x0")):
            if arr.shape != (self.n,):
                raise ValueError(f"{label} must have shape ({self.n},)")
        if np.any(self.lower >= self.upper):
            raise ValueError("require lower < upper elementwise (pin variables via equality rows)")
        if self.num_eq and (self.eq_residual is None or self.eq_jacobian is None):
            raise ValueError("num_eq > 0 requires eq_residual and eq_jacobian")
        if self.num_ineq and (self.ineq_residual is None or self.ineq_jacobian is None):
            raise ValueError("num_ineq > 0 requires ineq_residual and ineq_jacobian")

    @property
    def num_constraints(self) -> int:
        return self.num_eq + self.num_ineq


@dataclass
class SolverOptions:
    tol: float = 1e-8
    acceptable_tol: float = 1e-6
    max_iter: int = 500
    mu_init: float = 1e-1
    kappa_mu: float = 0.2          # monotone barrier reduction factor
    kappa_eps: float = 10.0        # inner loop exits when error <= kappa_eps * mu
    tau: float = 0.995             # fraction-to-boundary
    bound_push: float = 1e-2       # relative interior projection margin
    bound_frac: float = 1e-2
    bound_relax: float = 1e-8      # internal relative bound relaxation (solution reported w.r.t. originals)
    hessian_mode: str = "exact"    # "exact" | "gauss_newton"
    linear_solver: str = "auto"    # "auto" | "sparse" | "dense"
    dense_limit: int = 2000        # dense fallback allowed below this KKT dimension
    max_ls: int = 30
    armijo_eta: float = 1e-4
    reg_init: float = 1e-8
    reg_grow: float = 10.0
    reg_max: float = 1e12
    sigma_cap: float = 1e10        # dual safeguard kappa_Sigma
    log_path: str | None = None


@dataclass
class NlpSolution:
    x: np.ndarray
    status: SolveStatus
    objective_value: float
    kkt_residual: float
    iterations: int
    mult_eq: np.ndarray
    mult_ineq: np.ndarray
    mult_lower: np.ndarray
    mult_upper: np.ndarray
    primal_infeasibility: float
    message: str = ""
    iteration_log: list[dict] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL, SolveStatus.ACCEPTABLE)


# ---------------------------------------------------------------------------
# derivative verification


@dataclass
class DerivativeReport:
    max_rel_gradient: float
    max_rel_eq_jacobian: float
    max_rel_ineq_jacobian: float

    @property
    def max_rel(self) -> float:
        return max(self.max_rel_gradient, self.max_rel_eq_jacobian, self.max_rel_ineq_jacobian)


def _central_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    cols = []
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        cols.append((np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)) / (2.0 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def check_derivatives(nlp: SparseNlp, x: np.ndarray | None = None, h: float = 1e-6) -> DerivativeReport:
    """Compare analytic gradient/Jacobians against central finite differences.

    Relative deviations are measured entrywise as |fd - an| / max(1, |an|).
    Cost is O(n) residual evaluations; intended for tests and debugging.
    """
    x = nlp.x0.copy() if x is None else np.asarray(x, dtype=float)

    g_an = np.asarray(nlp.gradient(x), dtype=float)
    g_fd = _central_jacobian(lambda v: np.array([nlp.objective(v)]), x, h)[0]
    rel_g = float(np.max(np.abs(g_fd - g_an) / np.maximum(1.0, np.abs(g_an)))) if x.size else 0.0

    rel_eq = 0.0
    if nlp.num_eq:
        J_an = sp.csr_matrix(nlp.eq_jacobian(x)).toarray()
        J_fd = _central_jacobian(nlp.eq_residual, x, h)
        rel_eq = float(np.max(np.abs(J_fd - J_an) / np.maximum(1.0, np.abs(J_an))))

    rel_ineq = 0.0
    if nlp.num_ineq:
        J_an = sp.csr_matrix(nlp.ineq_jacobian(x)).toarray()
        J_fd = _central_jacobian(nlp.ineq_residual, x, h)
        rel_ineq = float(np.max(np.abs(J_fd - J_an) / np.maximum(1.0, np.abs(J_an))))

    return DerivativeReport(rel_g, rel_eq, rel_ineq)


# ---------------------------------------------------------------------------
# elastic relaxation


def relax_equalities(
    nlp: SparseNlp,
    rows: np.ndarray,
    slack_lower: np.ndarray,
    slack_upper: np.ndarray,
    weight_lin: float = 0.0,
    weight_quad: float = 1.0,
) -> SparseNlp:
    """Elastic mode: add one slack per selected equality row.

    Selected rows r become ``c_r(x) + sigma_r = 0`` with ``sigma`` boxed by the
    given bounds and penalized ``weight_lin * sigma + weight_quad * sigma^2``
    in the objective. Returns a new problem over ``[x; sigma]``.
    """
    rows = np.asarray(rows, dtype=int)
    k = rows.size
    if k == 0:
        return nlp
    n = nlp.n
    slack_lower = np.asarray(slack_lower, dtype=float)
    slack_upper = np.asarray(slack_upper, dtype=float)

    sel = sp.csr_matrix(
        (np.ones(k), (rows, np.arange(k))), shape=(nlp.num_eq, k)
    )

    def objective(xe: np.ndarray) -> float:
        x, sig = xe[:n], xe[n:]
        return float(nlp.objective(x) + weight_lin * np.sum(sig) + weight_quad * np.dot(sig, sig))

    def gradient(xe: np.ndarray) -> np.ndarray:
        x, sig = xe[:n], xe[n:]
        return np.concatenate([nlp.gradient(x), weight_lin + 2.0 * weight_quad * sig])

    def eq_residual(xe: np.ndarray) -> np.ndarray:
        x, sig = xe[:n], xe[n:]
        return nlp.eq_residual(x) + sel @ sig

    def eq_jacobian(xe: np.ndarray) -> sp.spmatrix:
        return sp.hstack([sp.csr_matrix(nlp.eq_jacobian(xe[:n])), sel], format="csr")

    ineq_residual = None
    ineq_jacobian = None
    if nlp.num_ineq:
        def ineq_residual(xe: np.ndarray) -> np.ndarray:
            return nlp.ineq_residual(xe[:n])

        def ineq_jacobian(xe: np.ndarray) -> sp.spmatrix:
            Ji = sp.csr_matrix(nlp.ineq_jacobian(xe[:n]))
            return sp.hstack([Ji, sp.csr_matrix((nlp.num_ineq, k))], format="csr")

    hess = None
    if nlp.lagrangian_hessian is not None:
        def hess(xe: np.ndarray, obj_w: float, y_eq: np.ndarray, y_ineq: np.ndarray) -> sp.spmatrix:
            H = sp.coo_matrix(nlp.lagrangian_hessian(xe[:n], obj_w, y_eq, y_ineq))
            diag = sp.coo_matrix(
                (np.full(k, 2.0 * weight_quad * obj_w), (np.arange(n, n + k), np.arange(n, n + k))),
                shape=(n + k, n + k),
            )
            H_full = sp.coo_matrix((H.data, (H.row, H.col)), shape=(n + k, n + k))
            return (H_full + diag).tocsr()

    x0_sig = np.clip(np.zeros(k), slack_lower, slack_upper)
    return SparseNlp(
        n=n + k,
        objective=objective,
        gradient=gradient,
        lower=np.concatenate([nlp.lower, slack_lower]),
        upper=np.concatenate([nlp.upper, slack_upper]),
        x0=np.concatenate([nlp.x0, x0_sig]),
        num_eq=nlp.num_eq,
        eq_residual=eq_residual,
        eq_jacobian=eq_jacobian,
        num_ineq=nlp.num_ineq,
        ineq_residual=ineq_residual,
        ineq_jacobian=ineq_jacobian,
        lagrangian_hessian=hess,
        name=nlp.name + "+elastic",
    )
