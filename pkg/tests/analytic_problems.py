"""A suite of small nonlinear programs with independently known solutions.

Each case carries a hand-derived (or dense-linear-algebra) optimum so solver
accuracy can be measured against an oracle rather than against itself. The
suite is shared between the unit tests and the acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from gasmpc.nlp import SolverOptions, SparseNlp


@dataclass
class AnalyticCase:
    name: str
    nlp: SparseNlp
    # any of these optima is acceptable (problems with symmetric minimizers)
    x_opt_candidates: list[np.ndarray]
    f_opt: float
    options: SolverOptions = field(default_factory=SolverOptions)
    # optional extra assertions on the solution object
    extra_checks: Callable | None = None

    def x_error(self, x: np.ndarray) -> float:
        return min(float(np.max(np.abs(x - cand))) for cand in self.x_opt_candidates)


def _rosenbrock() -> AnalyticCase:
    def f(x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def g(x):
        return np.array([
            -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
            200 * (x[1] - x[0] ** 2),
        ])

    def hess(x, w, ye, yi):
        return sp.coo_matrix(w * np.array([
            [2 - 400 * x[1] + 1200 * x[0] ** 2, -400 * x[0]],
            [-400 * x[0], 200.0],
        ]))

    nlp = SparseNlp(
        n=2, objective=f, gradient=g,
        lower=np.array([-5.0, -5.0]), upper=np.array([5.0, 5.0]),
        x0=np.array([-1.2, 1.0]), lagrangian_hessian=hess, name="rosenbrock_box",
    )
    return AnalyticCase("rosenbrock_box", nlp, [np.array([1.0, 1.0])], 0.0)


def _bound_active_qp() -> AnalyticCase:
    # min x^2 s.t. x >= 1: optimum pinned at the bound with multiplier 2
    nlp = SparseNlp(
        n=1,
        objective=lambda x: float(x[0] ** 2),
        gradient=lambda x: np.array([2 * x[0]]),
        lower=np.array([1.0]), upper=np.array([np.inf]), x0=np.array([3.0]),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(np.array([[2.0 * w]])),
        name="bound_active_qp",
    )

    def extra(sol):
        assert abs(sol.mult_lower[0] - 2.0) < 1e-4, sol.mult_lower

    return AnalyticCase("bound_active_qp", nlp, [np.array([1.0])], 1.0, extra_checks=extra)


def _equality_qp() -> AnalyticCase:
    # convex QP with linear equalities; oracle = dense KKT system solve
    rng = np.random.default_rng(7)
    n, m = 6, 3
    M = rng.standard_normal((n, n))
    Q = M @ M.T + n * np.eye(n)
    c = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(kkt, np.concatenate([-c, b]))
    x_ref, y_ref = ref[:n], ref[n:]
    f_ref = float(0.5 * x_ref @ Q @ x_ref + c @ x_ref)

    nlp = SparseNlp(
        n=n,
        objective=lambda x: float(0.5 * x @ Q @ x + c @ x),
        gradient=lambda x: Q @ x + c,
        lower=np.full(n, -np.inf), upper=np.full(n, np.inf), x0=np.zeros(n),
        num_eq=m,
        eq_residual=lambda x: A @ x - b,
        eq_jacobian=lambda x: sp.csr_matrix(A),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(w * Q),
        name="equality_qp",
    )

    def extra(sol):
        assert np.max(np.abs(sol.mult_eq - y_ref)) < 1e-4

    return AnalyticCase("equality_qp", nlp, [x_ref], f_ref, extra_checks=extra)


def _inequality_qp() -> AnalyticCase:
    # min (x-2)^2 + (y-1)^2 s.t. x + y <= 2, x,y >= 0 -> (1.5, 0.5), multiplier 1
    nlp = SparseNlp(
        n=2,
        objective=lambda x: float((x[0] - 2) ** 2 + (x[1] - 1) ** 2),
        gradient=lambda x: np.array([2 * (x[0] - 2), 2 * (x[1] - 1)]),
        lower=np.zeros(2), upper=np.full(2, np.inf), x0=np.array([0.5, 0.5]),
        num_ineq=1,
        ineq_residual=lambda x: np.array([x[0] + x[1] - 2.0]),
        ineq_jacobian=lambda x: sp.csr_matrix(np.array([[1.0, 1.0]])),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(2.0 * w * np.eye(2)),
        name="inequality_qp",
    )

    def extra(sol):
        assert abs(sol.mult_ineq[0] - 1.0) < 1e-4

    return AnalyticCase("inequality_qp", nlp, [np.array([1.5, 0.5])], 0.5,
                        extra_checks=extra)


def _nonconvex_circle() -> AnalyticCase:
    # min x*y on the circle x^2 + y^2 = 2: minima at (1,-1) and (-1,1), f = -1
    nlp = SparseNlp(
        n=2,
        objective=lambda x: float(x[0] * x[1]),
        gradient=lambda x: np.array([x[1], x[0]]),
        lower=np.full(2, -np.inf), upper=np.full(2, np.inf),
        x0=np.array([0.9, -1.2]),
        num_eq=1,
        eq_residual=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 2.0]),
        eq_jacobian=lambda x: sp.csr_matrix(np.array([[2 * x[0], 2 * x[1]]])),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(
            np.array([[2 * ye[0], w], [w, 2 * ye[0]]])),
        name="nonconvex_circle",
    )
    return AnalyticCase("nonconvex_circle", nlp,
                        [np.array([1.0, -1.0]), np.array([-1.0, 1.0])], -1.0)


def _box_projection() -> AnalyticCase:
    # min ||x - p||^2 over a box: the optimum is the componentwise clip of p
    rng = np.random.default_rng(3)
    n = 20
    p = 2.0 * rng.standard_normal(n)
    lo = np.full(n, -0.5)
    hi = np.full(n, 0.7)
    x_ref = np.clip(p, lo, hi)
    f_ref = float(np.sum((x_ref - p) ** 2))

    nlp = SparseNlp(
        n=n,
        objective=lambda x: float(np.sum((x - p) ** 2)),
        gradient=lambda x: 2.0 * (x - p),
        lower=lo, upper=hi, x0=np.zeros(n),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(2.0 * w * sp.eye(n)),
        name="box_projection",
    )
    return AnalyticCase("box_projection", nlp, [x_ref], f_ref)


def _constructed_kkt_qp() -> AnalyticCase:
    # Strictly convex QP whose optimum is designed in advance: pick the point,
    # the active set and the multipliers, then back out the linear cost from
    # the stationarity condition  Q x* + c + A^T y* + a1^T lam1 = 0.
    Q = np.diag([2.0, 3.0, 4.0, 5.0, 6.0])
    x_star = np.array([0.5, -0.3, 0.8, 0.1, -0.6])
    A = np.array([[1.0, 1.0, 0.0, 0.0, 1.0],
                  [0.0, 1.0, -1.0, 2.0, 0.0]])
    b = A @ x_star
    y_star = np.array([0.4, -0.2])
    a1 = np.array([1.0, 0.0, 1.0, 0.0, 0.0])   # active:   a1.x <= a1.x*
    lam1 = 0.7
    a2 = np.array([0.0, 1.0, 0.0, 1.0, 0.0])   # inactive: a2.x <= a2.x* + 1
    c = -(Q @ x_star + A.T @ y_star + a1 * lam1)
    G = np.vstack([a1, a2])
    g_rhs = np.array([a1 @ x_star, a2 @ x_star + 1.0])
    f_ref = float(0.5 * x_star @ Q @ x_star + c @ x_star)

    nlp = SparseNlp(
        n=5,
        objective=lambda x: float(0.5 * x @ Q @ x + c @ x),
        gradient=lambda x: Q @ x + c,
        lower=np.full(5, -np.inf), upper=np.full(5, np.inf), x0=np.zeros(5),
        num_eq=2,
        eq_residual=lambda x: A @ x - b,
        eq_jacobian=lambda x: sp.csr_matrix(A),
        num_ineq=2,
        ineq_residual=lambda x: G @ x - g_rhs,
        ineq_jacobian=lambda x: sp.csr_matrix(G),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(w * Q),
        name="constructed_kkt_qp",
    )

    def extra(sol):
        assert np.max(np.abs(sol.mult_eq - y_star)) < 1e-4
        assert abs(sol.mult_ineq[0] - lam1) < 1e-4
        assert abs(sol.mult_ineq[1]) < 1e-6  # inactive row carries no force

    return AnalyticCase("constructed_kkt_qp", nlp, [x_star], f_ref, extra_checks=extra)


def _spread_curvature_qp() -> AnalyticCase:
    # separable QP with curvature spread over two decades and active bounds;
    # oracle is the clip of the unconstrained minimizer
    rng = np.random.default_rng(11)
    n = 8
    d = 10.0 ** (-np.arange(n) / 3.5)   # 1 .. 1e-2
    t = rng.uniform(-1.5, 1.5, size=n)
    lo = np.full(n, -1.0)
    hi = np.full(n, 1.0)
    x_ref = np.clip(t, lo, hi)
    f_ref = float(np.sum(d * (x_ref - t) ** 2))

    nlp = SparseNlp(
        n=n,
        objective=lambda x: float(np.sum(d * (x - t) ** 2)),
        gradient=lambda x: 2.0 * d * (x - t),
        lower=lo, upper=hi, x0=np.zeros(n),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(np.diag(2.0 * w * d)),
        name="spread_curvature_qp",
    )
    return AnalyticCase("spread_curvature_qp", nlp, [x_ref], f_ref)


def _linear_on_circle() -> AnalyticCase:
    # min c.x s.t. |x|^2 = 1: optimum is -c/|c|, f = -|c|
    c = np.array([1.0, 2.0])
    nc = float(np.linalg.norm(c))
    x_ref = -c / nc

    nlp = SparseNlp(
        n=2,
        objective=lambda x: float(c @ x),
        gradient=lambda x: c.copy(),
        lower=np.full(2, -np.inf), upper=np.full(2, np.inf),
        x0=np.array([0.8, 0.2]),
        num_eq=1,
        eq_residual=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        eq_jacobian=lambda x: sp.csr_matrix(np.array([[2 * x[0], 2 * x[1]]])),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(2.0 * ye[0] * np.eye(2)),
        name="linear_on_circle",
    )
    return AnalyticCase("linear_on_circle", nlp, [x_ref], -nc)


def _chained_rosenbrock() -> AnalyticCase:
    # sparse 200-variable chained Rosenbrock started inside the global basin
    N = 200

    def f(x):
        return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))

    def g(x):
        grad = np.zeros(N)
        grad[:-1] += -400 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2 * (1 - x[:-1])
        grad[1:] += 200 * (x[1:] - x[:-1] ** 2)
        return grad

    def hess(x, w, ye, yi):
        diag = np.zeros(N)
        diag[:-1] += w * (-400 * (x[1:] - x[:-1] ** 2) + 800 * x[:-1] ** 2 + 2)
        diag[1:] += w * 200
        off = w * (-400 * x[:-1])
        rows = np.concatenate([np.arange(N), np.arange(N - 1), np.arange(1, N)])
        cols = np.concatenate([np.arange(N), np.arange(1, N), np.arange(N - 1)])
        vals = np.concatenate([diag, off, off])
        return sp.coo_matrix((vals, (rows, cols)), shape=(N, N))

    nlp = SparseNlp(
        n=N, objective=f, gradient=g,
        lower=np.full(N, -5.0), upper=np.full(N, 5.0),
        x0=np.full(N, 0.5), lagrangian_hessian=hess, name="chained_rosenbrock",
    )
    return AnalyticCase("chained_rosenbrock", nlp, [np.ones(N)], 0.0,
                        options=SolverOptions(max_iter=2000))


def _scaled_equality_qp() -> AnalyticCase:
    # badly row-scaled equality QP; oracle via dense KKT solve on the
    # unscaled system (row scaling must not move the primal solution)
    rng = np.random.default_rng(21)
    n, m = 5, 2
    M = rng.standard_normal((n, n))
    Q = M @ M.T + n * np.eye(n)
    c = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    scale = np.array([1e3, 1e-3])
    As = scale[:, None] * A
    bs = scale * b
    kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(kkt, np.concatenate([-c, b]))
    x_ref = ref[:n]
    f_ref = float(0.5 * x_ref @ Q @ x_ref + c @ x_ref)

    nlp = SparseNlp(
        n=n,
        objective=lambda x: float(0.5 * x @ Q @ x + c @ x),
        gradient=lambda x: Q @ x + c,
        lower=np.full(n, -np.inf), upper=np.full(n, np.inf), x0=np.zeros(n),
        num_eq=m,
        eq_residual=lambda x: As @ x - bs,
        eq_jacobian=lambda x: sp.csr_matrix(As),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(w * Q),
        name="scaled_equality_qp",
    )
    return AnalyticCase("scaled_equality_qp", nlp, [x_ref], f_ref)


def analytic_suite() -> list[AnalyticCase]:
    """All oracle-bearing problems, in a stable order."""
    return [
        _rosenbrock(),
        _bound_active_qp(),
        _equality_qp(),
        _inequality_qp(),
        _nonconvex_circle(),
        _box_projection(),
        _constructed_kkt_qp(),
        _spread_curvature_qp(),
        _linear_on_circle(),
        _chained_rosenbrock(),
        _scaled_equality_qp(),
    ]


def infeasible_case() -> SparseNlp:
    """x >= 1 as a bound against x <= -1 as a constraint: no feasible point."""
    return SparseNlp(
        n=1,
        objective=lambda x: float(x[0] ** 2),
        gradient=lambda x: np.array([2 * x[0]]),
        lower=np.array([1.0]), upper=np.array([np.inf]), x0=np.array([2.0]),
        num_ineq=1,
        ineq_residual=lambda x: np.array([x[0] + 1.0]),
        ineq_jacobian=lambda x: sp.csr_matrix(np.array([[1.0]])),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(np.array([[2.0 * w]])),
        name="infeasible_box_vs_row",
    )
