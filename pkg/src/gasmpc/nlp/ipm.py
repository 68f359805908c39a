"""Primal-dual interior-point solver over sparse KKT systems.

Algorithm outline: log-barrier treatment of variable bounds and inequality
slacks, damped Newton steps on the primal-dual KKT conditions, a monotone
barrier schedule (mu <- kappa_mu * mu once the inner error drops below
kappa_eps * mu), fraction-to-boundary step clipping, an l1 merit line search
with a short non-monotone memory and second-order corrections (recomputed
right-hand sides reusing the factorized KKT matrix), and diagonal
regularization grown until the Newton direction is a descent direction for
the merit function. Equality multipliers start from a least-squares estimate.
Linear solves use a sparse LU of the symmetric condensed KKT matrix with a
dense fallback for small systems.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import NlpSolution, SolveStatus, SolverOptions, SparseNlp

_EMPTY = np.zeros(0)
_MAX_SOC = 4
_SOC_THETA_FACTOR = 0.99
_MERIT_MEMORY = 5


class _Eval:
    """Lazily cached callback evaluations at one point."""

    def __init__(self, nlp: SparseNlp, x: np.ndarray):
        self._nlp = nlp
        self.x = x
        self.f = float(nlp.objective(x))
        self.ce = np.asarray(nlp.eq_residual(x), dtype=float) if nlp.num_eq else _EMPTY
        self.ci = np.asarray(nlp.ineq_residual(x), dtype=float) if nlp.num_ineq else _EMPTY
        self._g = None
        self._Je = None
        self._Ji = None

    @property
    def g(self) -> np.ndarray:
        if self._g is None:
            self._g = np.asarray(self._nlp.gradient(self.x), dtype=float)
        return self._g

    @property
    def Je(self) -> sp.csr_matrix:
        if self._Je is None:
            self._Je = (sp.csr_matrix(self._nlp.eq_jacobian(self.x)) if self._nlp.num_eq
                        else sp.csr_matrix((0, self._nlp.n)))
        return self._Je

    @property
    def Ji(self) -> sp.csr_matrix:
        if self._Ji is None:
            self._Ji = (sp.csr_matrix(self._nlp.ineq_jacobian(self.x)) if self._nlp.num_ineq
                        else sp.csr_matrix((0, self._nlp.n)))
        return self._Ji

    @property
    def residuals_finite(self) -> bool:
        return bool(np.isfinite(self.f) and np.all(np.isfinite(self.ce))
                    and np.all(np.isfinite(self.ci)))


class InteriorPointSolver:
    def __init__(self, nlp: SparseNlp, options: SolverOptions | None = None):
        self.nlp = nlp
        self.opt = options or SolverOptions()
        self.n = nlp.n
        self.me = nlp.num_eq
        self.mi = nlp.num_ineq
        self.fin_lo = np.isfinite(nlp.lower)
        self.fin_up = np.isfinite(nlp.upper)
        # work against slightly relaxed bounds so solutions that sit exactly
        # on a bound (including ones forced there by equality rows) keep a
        # strictly interior neighbourhood for the barrier
        relax = self.opt.bound_relax
        self.lb = np.where(self.fin_lo,
                           nlp.lower - relax * np.maximum(1.0, np.abs(nlp.lower)),
                           nlp.lower)
        self.ub = np.where(self.fin_up,
                           nlp.upper + relax * np.maximum(1.0, np.abs(nlp.upper)),
                           nlp.upper)
        self._last_reg = 0.0

    # -- initialization ----------------------------------------------------

    def _interior_start(self, x0: np.ndarray) -> np.ndarray:
        lb, ub = self.lb, self.ub
        x = np.asarray(x0, dtype=float).copy()
        push, frac = self.opt.bound_push, self.opt.bound_frac
        both = self.fin_lo & self.fin_up
        width = np.where(both, ub - lb, np.inf)
        lo_pad = np.minimum(push * np.maximum(1.0, np.abs(np.where(self.fin_lo, lb, 0.0))),
                            frac * width)
        up_pad = np.minimum(push * np.maximum(1.0, np.abs(np.where(self.fin_up, ub, 0.0))),
                            frac * width)
        x = np.where(self.fin_lo, np.maximum(x, lb + lo_pad), x)
        x = np.where(self.fin_up, np.minimum(x, ub - up_pad), x)
        bad = both & ((x <= lb) | (x >= ub))
        if np.any(bad):
            mid = 0.5 * (np.where(both, lb, 0.0) + np.where(both, ub, 0.0))
            x = np.where(bad, mid, x)
        return x

    def _initial_multipliers(self, ev: _Eval) -> np.ndarray:
        """Least-squares equality multiplier estimate: minimize ``|grad + Je^T y|``.

        Inequality multipliers are set by the caller to ``mu / s`` so each
        complementarity pair starts exactly centered; estimating them here
        would seed inactive constraints with wildly off-center products.
        """
        y_e = np.zeros(self.me)
        if self.me == 0:
            return y_e
        try:
            K = self._assemble_kkt(sp.coo_matrix((self.n, self.n)), np.ones(self.n),
                                   ev.Je, ev.Ji, np.ones(self.mi), 0.0, 1e-10)
            solve_fn = self._factorize(K)
            if solve_fn is None:
                return y_e
            rhs = np.concatenate([-ev.g, np.zeros(self.me + self.mi)])
            sol = solve_fn(rhs)
            if sol is None:
                return y_e
            cand_e = sol[self.n:self.n + self.me]
            if float(np.max(np.abs(cand_e))) <= 1e3:
                y_e = cand_e
        except (RuntimeError, ValueError):
            pass
        return y_e

    # -- residual measures -------------------------------------------------

    def _kkt_error(self, ev: _Eval, x, s, y_e, y_i, z_lo, z_up, mu: float):
        r_d = ev.g.copy()
        if self.me:
            r_d += ev.Je.T @ y_e
        if self.mi:
            r_d += ev.Ji.T @ y_i
        r_d -= z_lo
        r_d += z_up
        mult_sum = (np.sum(np.abs(y_e)) + np.sum(np.abs(y_i))
                    + np.sum(np.abs(z_lo)) + np.sum(np.abs(z_up)))
        n_mult = self.me + self.mi + int(self.fin_lo.sum()) + int(self.fin_up.sum())
        s_d = max(100.0, mult_sum / max(1, n_mult)) / 100.0
        z_sum = np.sum(np.abs(z_lo)) + np.sum(np.abs(z_up)) + np.sum(np.abs(y_i))
        n_comp = int(self.fin_lo.sum()) + int(self.fin_up.sum()) + self.mi
        s_c = max(100.0, z_sum / max(1, n_comp)) / 100.0

        dual_inf = float(np.max(np.abs(r_d))) if r_d.size else 0.0
        prim_inf = 0.0
        if self.me:
            prim_inf = max(prim_inf, float(np.max(np.abs(ev.ce))))
        if self.mi:
            prim_inf = max(prim_inf, float(np.max(np.abs(ev.ci + s))))
        comp = 0.0
        if self.fin_lo.any():
            sl = (x - self.lb)[self.fin_lo]
            comp = max(comp, float(np.max(np.abs(sl * z_lo[self.fin_lo] - mu))))
        if self.fin_up.any():
            sl = (self.ub - x)[self.fin_up]
            comp = max(comp, float(np.max(np.abs(sl * z_up[self.fin_up] - mu))))
        if self.mi:
            comp = max(comp, float(np.max(np.abs(s * y_i - mu))))
        return max(dual_inf / s_d, prim_inf, comp / s_c), dual_inf, prim_inf, comp

    def _local_infeasibility(self, ev: _Eval, x, s) -> bool:
        """True when the constraint violation is at a projected stationary point."""
        g = np.zeros(self.n)
        if self.me:
            g += ev.Je.T @ ev.ce
        if self.mi:
            g += ev.Ji.T @ (ev.ci + s)
        lb, ub = self.lb, self.ub
        near = 1e-6 * np.maximum(1.0, np.abs(x))
        blocked_lo = self.fin_lo & (x - lb <= near) & (g > 0)
        blocked_up = self.fin_up & (ub - x <= near) & (g < 0)
        g = np.where(blocked_lo | blocked_up, 0.0, g)
        theta = self._constraint_l1(ev, s)
        return float(np.max(np.abs(g), initial=0.0)) <= 1e-4 * max(1e-8, theta)

    # -- linear algebra ----------------------------------------------------

    def _hessian(self, x, y_e, y_i) -> sp.coo_matrix:
        cb = self.nlp.lagrangian_hessian
        if cb is None:
            return sp.coo_matrix((self.n, self.n))
        if self.opt.hessian_mode == "gauss_newton":
            y_e = np.zeros_like(y_e)
            y_i = np.zeros_like(y_i)
        return sp.coo_matrix(cb(x, 1.0, y_e, y_i))

    def _assemble_kkt(self, H: sp.coo_matrix, sigma_x, Je, Ji, d_ineq, delta_w, delta_c):
        n, me, mi = self.n, self.me, self.mi
        dim = n + me + mi
        rows = [H.row, np.arange(n)]
        cols = [H.col, np.arange(n)]
        vals = [H.data, sigma_x + delta_w]
        if me:
            Jec = Je.tocoo()
            rows += [Jec.row + n, Jec.col, np.arange(n, n + me)]
            cols += [Jec.col, Jec.row + n, np.arange(n, n + me)]
            vals += [Jec.data, Jec.data,
                     np.full(me, -delta_c if delta_c > 0.0 else -1e-14)]
        if mi:
            Jic = Ji.tocoo()
            rows += [Jic.row + n + me, Jic.col, np.arange(n + me, dim)]
            cols += [Jic.col, Jic.row + n + me, np.arange(n + me, dim)]
            vals += [Jic.data, Jic.data, -(d_ineq + delta_c)]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        ).tocsc()

    def _factorize(self, K: sp.csc_matrix):
        """Return a rhs -> solution callable (with one refinement pass) or None."""
        dim = K.shape[0]
        if self.opt.linear_solver != "dense" or dim > self.opt.dense_limit:
            try:
                lu = spla.splu(K)

                def solve_sparse(rhs: np.ndarray) -> np.ndarray | None:
                    sol = lu.solve(rhs)
                    if not np.all(np.isfinite(sol)):
                        return None
                    resid = rhs - K @ sol
                    if np.max(np.abs(resid)) > 1e-12 * max(1.0, float(np.max(np.abs(rhs)))):
                        sol = sol + lu.solve(resid)
                    return sol if np.all(np.isfinite(sol)) else None

                return solve_sparse
            except RuntimeError:
                if self.opt.linear_solver == "sparse" or dim > self.opt.dense_limit:
                    return None
        try:
            import scipy.linalg as sla
            lu_piv = sla.lu_factor(K.toarray())

            def solve_dense(rhs: np.ndarray) -> np.ndarray | None:
                sol = sla.lu_solve(lu_piv, rhs)
                return sol if np.all(np.isfinite(sol)) else None

            return solve_dense
        except (np.linalg.LinAlgError, ValueError):
            return None

    # -- merit function ----------------------------------------------------

    def _barrier_value(self, ev: _Eval, x, s, mu: float) -> float:
        lb, ub = self.lb, self.ub
        val = ev.f
        if self.fin_lo.any():
            d = (x - lb)[self.fin_lo]
            if np.any(d <= 0.0):
                return np.inf
            val -= mu * float(np.sum(np.log(d)))
        if self.fin_up.any():
            d = (ub - x)[self.fin_up]
            if np.any(d <= 0.0):
                return np.inf
            val -= mu * float(np.sum(np.log(d)))
        if self.mi:
            if np.any(s <= 0.0):
                return np.inf
            val -= mu * float(np.sum(np.log(s)))
        return val

    @staticmethod
    def _constraint_l1(ev: _Eval, s) -> float:
        total = 0.0
        if ev.ce.size:
            total += float(np.sum(np.abs(ev.ce)))
        if ev.ci.size:
            total += float(np.sum(np.abs(ev.ci + s)))
        return total

    def _alpha_boundary(self, x, s, dx, ds, sl_lo, sl_up, tau: float) -> float:
        alpha = 1.0
        neg = (dx < 0) & self.fin_lo
        if np.any(neg):
            alpha = min(alpha, float(np.min(tau * sl_lo[neg] / -dx[neg])))
        pos = (dx > 0) & self.fin_up
        if np.any(pos):
            alpha = min(alpha, float(np.min(tau * sl_up[pos] / dx[pos])))
        if self.mi:
            neg_s = ds < 0
            if np.any(neg_s):
                alpha = min(alpha, float(np.min(tau * s[neg_s] / -ds[neg_s])))
        return alpha

    # -- main loop ----------------------------------------------------------

    def solve(self, x0: np.ndarray | None = None, mu_init: float | None = None) -> NlpSolution:
        opt = self.opt
        nlp = self.nlp
        lb, ub = self.lb, self.ub

        x = self._interior_start(nlp.x0 if x0 is None else x0)
        ev = _Eval(nlp, x)
        if not ev.residuals_finite:
            return self._finish(ev, _EMPTY, _EMPTY, np.zeros(self.n), np.zeros(self.n),
                                np.inf, np.inf, SolveStatus.NUMERICAL_FAILURE, 0,
                                "nonfinite evaluation at the start point", [])

        mu = float(mu_init if mu_init is not None else opt.mu_init)
        mu_min = opt.tol / 10.0

        s = np.maximum(-ev.ci, np.maximum(1e-2, 1e-2 * np.abs(ev.ci))) if self.mi else _EMPTY
        y_e = self._initial_multipliers(ev)
        y_i = mu / s if self.mi else _EMPTY
        z_lo = np.where(self.fin_lo, np.clip(mu / np.maximum(x - lb, 1e-12), 1e-6, 1e6), 0.0)
        z_up = np.where(self.fin_up, np.clip(mu / np.maximum(ub - x, 1e-12), 1e-6, 1e6), 0.0)

        nu = 1.0
        merit_memory: list[float] = []
        log: list[dict] = []
        status: SolveStatus | None = None
        message = ""
        it = 0
        best_prim = np.inf
        prim_stall = 0

        while it < opt.max_iter:
            it += 1
            err_0, dual_inf, prim_inf, comp0 = self._kkt_error(ev, x, s, y_e, y_i, z_lo, z_up, 0.0)
            if err_0 <= opt.tol:
                status = SolveStatus.OPTIMAL
                break
            if prim_inf < best_prim * (1.0 - 1e-6):
                best_prim = prim_inf
                prim_stall = 0
            else:
                prim_stall += 1
            if prim_stall >= 25 and prim_inf > max(1e4 * opt.tol, 1e-6):
                mult_blowup = max(
                    float(np.max(np.abs(y_e), initial=0.0)),
                    float(np.max(np.abs(y_i), initial=0.0))) > 1e8
                if mult_blowup or self._local_infeasibility(ev, x, s):
                    status = SolveStatus.INFEASIBLE
                    message = "constraint violation is locally stationary"
                    break
                prim_stall = 0
            err_mu, *_ = self._kkt_error(ev, x, s, y_e, y_i, z_lo, z_up, mu)
            while err_mu <= opt.kappa_eps * mu and mu > mu_min:
                mu = max(mu_min, opt.kappa_mu * mu)
                merit_memory.clear()
                err_mu, *_ = self._kkt_error(ev, x, s, y_e, y_i, z_lo, z_up, mu)

            sl_lo = np.where(self.fin_lo, x - lb, 1.0)
            sl_up = np.where(self.fin_up, ub - x, 1.0)
            sigma_x = (np.where(self.fin_lo, z_lo / sl_lo, 0.0)
                       + np.where(self.fin_up, z_up / sl_up, 0.0))
            bar_grad = (ev.g - np.where(self.fin_lo, mu / sl_lo, 0.0)
                        + np.where(self.fin_up, mu / sl_up, 0.0))
            r_tilde = bar_grad.copy()
            if self.me:
                r_tilde += ev.Je.T @ y_e
            if self.mi:
                r_tilde += ev.Ji.T @ y_i
            rhs = np.concatenate([
                -r_tilde,
                -ev.ce,
                (-ev.ci - mu / y_i) if self.mi else _EMPTY,
            ])
            H = self._hessian(x, y_e, y_i)
            d_ineq = s / y_i if self.mi else _EMPTY
            theta = self._constraint_l1(ev, s)
            phi0 = self._barrier_value(ev, x, s, mu)

            delta_w = 0.0
            delta_c = 0.0
            accepted = False
            step = None
            for _attempt in range(24):
                K = self._assemble_kkt(H, sigma_x, ev.Je, ev.Ji, d_ineq, delta_w, delta_c)
                solve_fn = self._factorize(K)
                sol = solve_fn(rhs) if solve_fn is not None else None
                if sol is None:
                    delta_c = max(delta_c * opt.reg_grow, 1e-8)
                    delta_w = self._bump(delta_w)
                    if delta_w > opt.reg_max:
                        break
                    continue
                dx = sol[:self.n]
                dy_e = sol[self.n:self.n + self.me]
                dy_i = sol[self.n + self.me:]
                ds = (-(ev.ci + s) - ev.Ji @ dx) if self.mi else _EMPTY

                nu_req = 1.0
                if dy_e.size:
                    nu_req = max(nu_req, 1.25 * float(np.max(np.abs(y_e + dy_e))))
                if dy_i.size:
                    nu_req = max(nu_req, 1.25 * float(np.max(np.abs(y_i + dy_i))))
                nu = max(nu, nu_req)
                dphi = float(bar_grad @ dx)
                if self.mi:
                    dphi -= float((mu / s) @ ds)
                dphi_bound = dphi - nu * theta
                if not (dphi_bound < 0.0 or (theta <= opt.tol and abs(dphi) <= 1e2 * opt.tol)):
                    delta_w = self._bump(delta_w)
                    if delta_w > opt.reg_max:
                        break
                    continue

                tau = opt.tau
                alpha_max = self._alpha_boundary(x, s, dx, ds, sl_lo, sl_up, tau)
                dz_lo = np.where(self.fin_lo, mu / sl_lo - z_lo - (z_lo / sl_lo) * dx, 0.0)
                dz_up = np.where(self.fin_up, mu / sl_up - z_up + (z_up / sl_up) * dx, 0.0)
                alpha_dual = 1.0
                for z_arr, dz_arr in ((z_lo[self.fin_lo], dz_lo[self.fin_lo]),
                                      (z_up[self.fin_up], dz_up[self.fin_up]),
                                      (y_i, dy_i)):
                    if z_arr.size:
                        neg_z = dz_arr < 0
                        if np.any(neg_z):
                            alpha_dual = min(alpha_dual,
                                             float(np.min(tau * z_arr[neg_z] / -dz_arr[neg_z])))

                merit_ref = max(merit_memory[-_MERIT_MEMORY:], default=phi0 + nu * theta)
                merit_ref = max(merit_ref, phi0 + nu * theta)

                def merit_ok(ev_t, x_t, s_t, alpha_t):
                    if not ev_t.residuals_finite:
                        return False, np.inf
                    phi_t = (self._barrier_value(ev_t, x_t, s_t, mu)
                             + nu * self._constraint_l1(ev_t, s_t))
                    bound = merit_ref + opt.armijo_eta * alpha_t * dphi_bound \
                        + 1e-9 * abs(merit_ref)
                    return phi_t <= bound, phi_t

                alpha = alpha_max
                phi_acc = None
                for ls_iter in range(opt.max_ls):
                    x_trial = x + alpha * dx
                    s_trial = s + alpha * ds if self.mi else _EMPTY
                    ev_trial = _Eval(nlp, x_trial)
                    ok, phi_t = merit_ok(ev_trial, x_trial, s_trial, alpha)
                    if ok:
                        step = (x_trial, s_trial, ev_trial, dy_e, dy_i, dz_lo, dz_up,
                                alpha, alpha_dual, delta_w)
                        phi_acc = phi_t
                        accepted = True
                        break
                    if ls_iter == 0 and ev_trial.residuals_finite:
                        # second-order corrections: refresh the constraint
                        # right-hand side at the trial point, reuse the factors
                        theta_prev = self._constraint_l1(ev_trial, s_trial)
                        c_e_base = ev.ce.copy() if self.me else _EMPTY
                        c_i_base = (ev.ci + s).copy() if self.mi else _EMPTY
                        ce_soc = alpha * c_e_base + ev_trial.ce if self.me else _EMPTY
                        ci_soc = (alpha * c_i_base + (ev_trial.ci + s_trial)) if self.mi else _EMPTY
                        soc_ok = False
                        for _soc in range(_MAX_SOC):
                            rhs_soc = np.concatenate([
                                -r_tilde,
                                -ce_soc,
                                (-ci_soc + s - mu / y_i) if self.mi else _EMPTY,
                            ])
                            sol_soc = solve_fn(rhs_soc)
                            if sol_soc is None:
                                break
                            dx_c = sol_soc[:self.n]
                            ds_c = (-ci_soc - ev.Ji @ dx_c) if self.mi else _EMPTY
                            alpha_c = self._alpha_boundary(x, s, dx_c, ds_c, sl_lo, sl_up, tau)
                            x_c = x + alpha_c * dx_c
                            s_c = s + alpha_c * ds_c if self.mi else _EMPTY
                            ev_c = _Eval(nlp, x_c)
                            if not ev_c.residuals_finite:
                                break
                            ok_c, phi_c = merit_ok(ev_c, x_c, s_c, alpha_c)
                            if ok_c:
                                dy_e_c = sol_soc[self.n:self.n + self.me]
                                dy_i_c = sol_soc[self.n + self.me:]
                                step = (x_c, s_c, ev_c, dy_e_c, dy_i_c, dz_lo, dz_up,
                                        alpha_c, alpha_dual, delta_w)
                                phi_acc = phi_c
                                soc_ok = True
                                break
                            theta_c = self._constraint_l1(ev_c, s_c)
                            if theta_c >= _SOC_THETA_FACTOR * theta_prev:
                                break
                            theta_prev = theta_c
                            ce_soc = alpha_c * ce_soc + ev_c.ce if self.me else _EMPTY
                            ci_soc = (alpha_c * ci_soc + (ev_c.ci + s_c)) if self.mi else _EMPTY
                        if soc_ok:
                            accepted = True
                            break
                    alpha *= 0.5
                if accepted:
                    self._last_reg = delta_w
                    if phi_acc is not None and np.isfinite(phi_acc):
                        merit_memory.append(phi_acc)
                        del merit_memory[:-_MERIT_MEMORY]
                    break
                delta_w = self._bump(delta_w)
                if delta_w > opt.reg_max:
                    break

            if not accepted:
                err_now, dual_inf, prim_inf, _ = self._kkt_error(ev, x, s, y_e, y_i, z_lo, z_up, 0.0)
                if err_now <= opt.acceptable_tol:
                    status = SolveStatus.ACCEPTABLE
                    message = "stalled at acceptable KKT error"
                elif prim_inf > max(1e4 * opt.tol, 1e-6) and self._local_infeasibility(ev, x, s):
                    status = SolveStatus.INFEASIBLE
                    message = "no merit progress; violation locally stationary"
                else:
                    status = SolveStatus.NUMERICAL_FAILURE
                    message = "regularization exhausted without an acceptable step"
                break

            x, s, ev, dy_e, dy_i, dz_lo, dz_up, alpha, alpha_dual, delta_w = step
            if self.mi:
                y_i = y_i + alpha_dual * dy_i
            z_lo = z_lo + alpha_dual * dz_lo
            z_up = z_up + alpha_dual * dz_up
            if self.me:
                # The merit line search limits only the primal variables;
                # equality multipliers are sign-free and absent from the merit
                # function, so when the primal step is short, take the fuller
                # dual step whenever it leaves a smaller dual residual.  This
                # keeps the duals converging even when the iterate is pinned
                # against barrier walls and alpha collapses.
                y_e_short = y_e + alpha * dy_e
                if alpha_dual > alpha:
                    y_e_full = y_e + alpha_dual * dy_e
                    if (self._dual_residual_norm(ev, y_e_full, y_i, z_lo, z_up)
                            < self._dual_residual_norm(ev, y_e_short, y_i, z_lo, z_up)):
                        y_e = y_e_full
                    else:
                        y_e = y_e_short
                else:
                    y_e = y_e_short
            # dual safeguard: keep bound multipliers within a band around mu/slack
            cap = opt.sigma_cap
            sl_lo = np.where(self.fin_lo, np.maximum(x - lb, 1e-300), 1.0)
            sl_up = np.where(self.fin_up, np.maximum(ub - x, 1e-300), 1.0)
            z_lo = np.where(self.fin_lo, np.clip(z_lo, mu / (cap * sl_lo), cap * mu / sl_lo), 0.0)
            z_up = np.where(self.fin_up, np.clip(z_up, mu / (cap * sl_up), cap * mu / sl_up), 0.0)
            if self.mi:
                y_i = np.clip(y_i, mu / (cap * s), cap * mu / s)
            log.append({
                "iter": it, "mu": mu, "objective": ev.f, "primal_inf": prim_inf,
                "dual_inf": dual_inf, "complementarity": comp0,
                "alpha_pri": alpha, "alpha_dual": alpha_dual, "delta_w": delta_w,
                "min_interior": self._min_interior(x, s),
            })

        err_final, dual_inf, prim_inf, comp = self._kkt_error(ev, x, s, y_e, y_i, z_lo, z_up, 0.0)
        if status is None:
            status = SolveStatus.MAX_ITER
            if err_final <= opt.acceptable_tol:
                status = SolveStatus.ACCEPTABLE
                message = "iteration limit at acceptable KKT error"
        sol = self._finish(ev, y_e, y_i, z_lo, z_up, err_final, prim_inf, status, it, message, log)
        if opt.log_path:
            self._write_log(opt.log_path, log, sol)
        return sol

    def _dual_residual_norm(self, ev: _Eval, y_e, y_i, z_lo, z_up) -> float:
        r = ev.g - z_lo + z_up
        if self.me:
            r = r + ev.Je.T @ y_e
        if self.mi:
            r = r + ev.Ji.T @ y_i
        return float(np.max(np.abs(r)))

    def _bump(self, delta_w: float) -> float:
        if delta_w == 0.0:
            base = self._last_reg / 3.0 if self._last_reg > 0.0 else self.opt.reg_init
            return max(base, self.opt.reg_init)
        return delta_w * self.opt.reg_grow

    def _min_interior(self, x, s) -> float:
        m = np.inf
        if self.fin_lo.any():
            m = min(m, float(np.min((x - self.lb)[self.fin_lo])))
        if self.fin_up.any():
            m = min(m, float(np.min((self.ub - x)[self.fin_up])))
        if self.mi and s.size:
            m = min(m, float(np.min(s)))
        return m

    def _finish(self, ev, y_e, y_i, z_lo, z_up, kkt, prim_inf, status, iters, message, log) -> NlpSolution:
        return NlpSolution(
            x=ev.x.copy(),
            status=status,
            objective_value=ev.f,
            kkt_residual=float(kkt),
            iterations=iters,
            mult_eq=np.asarray(y_e, dtype=float).copy(),
            mult_ineq=np.asarray(y_i, dtype=float).copy(),
            mult_lower=np.asarray(z_lo, dtype=float).copy(),
            mult_upper=np.asarray(z_up, dtype=float).copy(),
            primal_infeasibility=float(prim_inf),
            message=message,
            iteration_log=log,
        )

    @staticmethod
    def _write_log(path: str, log: list[dict], sol: NlpSolution) -> None:
        lines = []
        for rec in log:
            lines.append(
                "it={iter:4d} mu={mu:9.3e} f={objective: .8e} pinf={primal_inf:9.3e} "
                "dinf={dual_inf:9.3e} comp={complementarity:9.3e} "
                "alpha={alpha_pri:8.2e} alphaz={alpha_dual:8.2e} dw={delta_w:8.2e}".format(**rec)
            )
        lines.append(f"status={sol.status.value} kkt={sol.kkt_residual:.3e} "
                     f"f={sol.objective_value:.8e} iters={sol.iterations}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def solve(nlp: SparseNlp, options: SolverOptions | None = None,
          x0: np.ndarray | None = None, mu_init: float | None = None) -> NlpSolution:
    """Solve a sparse NLP with the bundled interior-point method."""
    return InteriorPointSolver(nlp, options).solve(x0=x0, mu_init=mu_init)
