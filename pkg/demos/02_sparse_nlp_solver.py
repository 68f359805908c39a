"""Exercise the bundled primal-dual interior-point solver on small problems.

The solver consumes sparse NLPs with equalities, inequalities and variable
bounds; it is the same engine behind the cyclic-steady-state and control
problems, so its behavior is easiest to inspect on textbook cases first.
"""
import numpy as np
import scipy.sparse as sp

from gasmpc.nlp import SolverOptions, SparseNlp, check_derivatives, solve


def rosenbrock_in_disk() -> SparseNlp:
    """Rosenbrock valley restricted to the unit disk (constraint active)."""

    def f(x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def g(x):
        return np.array([
            -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
            200 * (x[1] - x[0] ** 2),
        ])

    def hess(x, w, ye, yi):
        h = w * np.array([
            [2 - 400 * x[1] + 1200 * x[0] ** 2, -400 * x[0]],
            [-400 * x[0], 200.0],
        ])
        return sp.coo_matrix(h + yi[0] * 2 * np.eye(2))

    return SparseNlp(
        n=2, objective=f, gradient=g,
        lower=np.full(2, -5.0), upper=np.full(2, 5.0), x0=np.array([-0.5, 0.5]),
        num_ineq=1,
        ineq_residual=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        ineq_jacobian=lambda x: sp.csr_matrix(np.array([[2 * x[0], 2 * x[1]]])),
        lagrangian_hessian=hess, name="rosenbrock-disk",
    )


def linear_on_circle() -> SparseNlp:
    """Minimize x + y on the unit circle: optimum -(1,1)/sqrt(2), f = -sqrt(2)."""
    return SparseNlp(
        n=2,
        objective=lambda x: float(x[0] + x[1]),
        gradient=lambda x: np.ones(2),
        lower=np.full(2, -np.inf), upper=np.full(2, np.inf),
        x0=np.array([0.8, -0.6]),
        num_eq=1,
        eq_residual=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        eq_jacobian=lambda x: sp.csr_matrix(np.array([[2 * x[0], 2 * x[1]]])),
        lagrangian_hessian=lambda x, w, ye, yi: sp.coo_matrix(2 * ye[0] * np.eye(2)),
        name="linear-on-circle",
    )


for nlp in (rosenbrock_in_disk(), linear_on_circle()):
    report = check_derivatives(nlp)
    sol = solve(nlp, SolverOptions())
    print(f"{nlp.name}: {sol.status.value} in {sol.iterations} iterations")
    print(f"  derivative check (vs central differences): {report.max_rel:.2e}")
    print(f"  x* = {np.round(sol.x, 8)}")
    print(f"  f* = {sol.objective_value:.10f}")
    print(f"  KKT residual = {sol.kkt_residual:.2e}")
    print()

print("expected: rosenbrock-disk on the boundary near (0.7864, 0.6177);")
print("          linear-on-circle at -(0.7071, 0.7071) with f = -1.4142...")
