"""Finite-volume, implicit-in-time discretization of pipeline gas dynamics.

Each pipe is split into uniform cells carrying colocated density, velocity and
pressure unknowns; mass balances use donor-cell face fluxes and a backward
Euler step, and momentum balances reduce to a friction-dominated pressure-drop
relation on cell faces (half cells at the pipe ends couple to the terminal
node pressures). Compressors contribute a pressure-boost relation and a power
relation. All quantities are scaled to order-one magnitudes before entering
the nonlinear system.

The module exposes a small equation builder (`SystemBuilder`) that records
linear terms plus four vectorized nonlinear term families (products, smoothed
friction, compressor power, squared deviations), and freezes into a
`DiscreteSystem` with fast residual / Jacobian / Hessian evaluation and an
adjustable parameter vector. Helper functions emit a full network horizon or
one time-periodic operating cycle into a builder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .network import GasProperties, NetworkModel, NodeKind, compressor_power
from .nlp import SparseNlp

FRICTION_EPS_VELOCITY = 1e-3  # m/s, smoothing half-width of s*|s|


@dataclass(frozen=True)
class Scaling:
    """Reference magnitudes used to nondimensionalize the physical unknowns.

    With density scaled by pressure_unit / (Z R T / M), the ideal-gas relation
    between scaled pressure and scaled density is the identity, which keeps
    the equation-of-state rows linear.
    """

    pressure: float = 1e5  # Pa
    velocity: float = 1.0  # m/s
    mass_flow: float = 1.0  # kg/s
    power: float = 1e6  # W
    density: float = 1.0  # kg/m^3, set via for_gas

    @classmethod
    def for_gas(cls, gas: GasProperties, *, pressure: float = 1e5, velocity: float = 1.0,
                mass_flow: float = 1.0, power: float = 1e6) -> "Scaling":
        return cls(pressure=pressure, velocity=velocity, mass_flow=mass_flow,
                   power=power, density=pressure / gas.sound_speed_sq)


@dataclass(frozen=True)
class Horizon:
    """Number of implicit time steps and the duration of one step."""

    num_steps: int
    step_seconds: float

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("horizon needs at least one step")
        if self.step_seconds <= 0:
            raise ValueError("step duration must be positive")

    @property
    def step_hours(self) -> float:
        return self.step_seconds / 3600.0


class VariableIndex(NamedTuple):
    """Structured identity of one column of the nonlinear system."""

    kind: str  # density | velocity | pressure | flow_in | flow_out | node_pressure
    #            | source_flow | boost | comp_flow | power | lyapunov
    #            | stability_slack | elastic
    entity: str  # pipe / node / compressor id ("" for problem-level variables)
    cell: int  # cell index within a pipe, -1 when not applicable
    time: int  # time step 1..T, 0 for time-independent variables
    scenario: int  # scenario index, 0 for single-scenario systems


class RowIndex(NamedTuple):
    """Structured identity of one residual row."""

    kind: str  # eos | mass | outflow_def | momentum | node_balance
    #            | source_pressure | boost | power_def | control_pin
    #            | lyapunov_def | terminal_pressure | terminal_power
    #            | stability | elastic_pressure
    entity: str
    cell: int
    time: int
    scenario: int


class ParamIndex(NamedTuple):
    """Structured identity of one entry of the parameter vector."""

    kind: str  # initial_density | demand | pressure_set | fixed_flow
    #            | track_pressure_ref | track_power_ref | terminal_pressure_ref
    #            | terminal_power_ref | stability_rhs
    entity: str
    cell: int
    time: int
    scenario: int


@dataclass
class _ProdTerms:
    rows: list = field(default_factory=list)
    coeff: list = field(default_factory=list)
    col_a: list = field(default_factory=list)
    col_b: list = field(default_factory=list)


@dataclass
class _FrictionTerms:
    rows: list = field(default_factory=list)
    coeff: list = field(default_factory=list)
    rho_a: list = field(default_factory=list)
    rho_b: list = field(default_factory=list)
    w_a: list = field(default_factory=list)
    w_b: list = field(default_factory=list)
    vel_a: list = field(default_factory=list)
    vel_b: list = field(default_factory=list)
    v_a: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


@dataclass
class _PowerTerms:
    rows: list = field(default_factory=list)
    coeff: list = field(default_factory=list)
    col_flow: list = field(default_factory=list)
    col_boost: list = field(default_factory=list)
    exponent: list = field(default_factory=list)


@dataclass
class _SqdevTerms:
    rows: list = field(default_factory=list)
    coeff: list = field(default_factory=list)
    col: list = field(default_factory=list)
    ref_param: list = field(default_factory=list)


class SystemBuilder:
    """Incrementally records variables, parameters and residual terms.

    Residual rows have the convention ``r(x, p) = 0`` for equality rows and
    ``r(x, p) <= 0`` for inequality rows. Every term added is of one of five
    shapes: linear in x, linear in p, constant, or one of the vectorized
    nonlinear families (product, smoothed friction drop, compressor power,
    squared deviation from a parameter reference).
    """

    def __init__(self):
        self._var_index: dict[VariableIndex, int] = {}
        self._var_list: list[VariableIndex] = []
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._start: list[float] = []
        self._param_index: dict[ParamIndex, int] = {}
        self._param_list: list[ParamIndex] = []
        self._param_values: list[float] = []
        self._row_index: dict[RowIndex, int] = {}
        self._row_list: list[RowIndex] = []
        self._row_is_eq: list[bool] = []
        self._lin_rows: list[int] = []
        self._lin_cols: list[int] = []
        self._lin_vals: list[float] = []
        self._par_rows: list[int] = []
        self._par_cols: list[int] = []
        self._par_vals: list[float] = []
        self._const: dict[int, float] = {}
        self._prod = _ProdTerms()
        self._fric = _FrictionTerms()
        self._power = _PowerTerms()
        self._sqdev = _SqdevTerms()
        self._obj: dict[int, float] = {}

    # ---- declarations ----------------------------------------------------

    def new_var(self, index: VariableIndex, lower: float, upper: float, start: float) -> int:
        if index in self._var_index:
            raise ValueError(f"duplicate variable {index}")
        col = len(self._var_list)
        self._var_index[index] = col
        self._var_list.append(index)
        self._lower.append(lower)
        self._upper.append(upper)
        self._start.append(start)
        return col

    def var(self, index: VariableIndex) -> int:
        return self._var_index[index]

    @property
    def variables(self) -> list[VariableIndex]:
        """All variable indices declared so far, in column order."""
        return self._var_list

    def set_bounds(self, col: int, lower: float, upper: float) -> None:
        """Replace the bounds of an existing variable column."""
        self._lower[col] = lower
        self._upper[col] = upper

    def has_var(self, index: VariableIndex) -> bool:
        return index in self._var_index

    def row(self, index: RowIndex) -> int:
        return self._row_index[index]

    def new_param(self, index: ParamIndex, value: float) -> int:
        if index in self._param_index:
            raise ValueError(f"duplicate parameter {index}")
        idx = len(self._param_list)
        self._param_index[index] = idx
        self._param_list.append(index)
        self._param_values.append(value)
        return idx

    def get_or_create_param(self, index: ParamIndex, value: float) -> int:
        if index in self._param_index:
            return self._param_index[index]
        return self.new_param(index, value)

    def new_row(self, index: RowIndex, *, equality: bool = True) -> int:
        if index in self._row_index:
            raise ValueError(f"duplicate row {index}")
        row = len(self._row_list)
        self._row_index[index] = row
        self._row_list.append(index)
        self._row_is_eq.append(equality)
        return row

    # ---- terms -----------------------------------------------------------

    def linear(self, row: int, col: int, coeff: float) -> None:
        self._lin_rows.append(row)
        self._lin_cols.append(col)
        self._lin_vals.append(coeff)

    def param_term(self, row: int, param: int, coeff: float) -> None:
        self._par_rows.append(row)
        self._par_cols.append(param)
        self._par_vals.append(coeff)

    def const_term(self, row: int, value: float) -> None:
        self._const[row] = self._const.get(row, 0.0) + value

    def product(self, row: int, coeff: float, col_a: int, col_b: int) -> None:
        self._prod.rows.append(row)
        self._prod.coeff.append(coeff)
        self._prod.col_a.append(col_a)
        self._prod.col_b.append(col_b)

    def friction(self, row: int, coeff: float,
                 rho_cols: tuple[int, int], rho_weights: tuple[float, float],
                 vel_cols: tuple[int, int], vel_weights: tuple[float, float]) -> None:
        """Adds coeff * rho_mix * w(vel_mix) where w(s) = s*sqrt(s^2 + eps^2)."""
        self._fric.rows.append(row)
        self._fric.coeff.append(coeff)
        self._fric.rho_a.append(rho_cols[0])
        self._fric.rho_b.append(rho_cols[1])
        self._fric.w_a.append(rho_weights[0])
        self._fric.w_b.append(rho_weights[1])
        self._fric.vel_a.append(vel_cols[0])
        self._fric.vel_b.append(vel_cols[1])
        self._fric.v_a.append(vel_weights[0])
        self._fric.v_b.append(vel_weights[1])

    def power_term(self, row: int, coeff: float, col_flow: int, col_boost: int,
                   exponent: float) -> None:
        """Adds coeff * flow * (boost**exponent - 1)."""
        self._power.rows.append(row)
        self._power.coeff.append(coeff)
        self._power.col_flow.append(col_flow)
        self._power.col_boost.append(col_boost)
        self._power.exponent.append(exponent)

    def sqdev(self, row: int, coeff: float, col: int, ref_param: int) -> None:
        """Adds coeff * (x[col] - p[ref_param])**2."""
        self._sqdev.rows.append(row)
        self._sqdev.coeff.append(coeff)
        self._sqdev.col.append(col)
        self._sqdev.ref_param.append(ref_param)

    def objective_linear(self, col: int, coeff: float) -> None:
        self._obj[col] = self._obj.get(col, 0.0) + coeff

    # ---- freeze ------------------------------------------------------------

    def freeze(self) -> "DiscreteSystem":
        return DiscreteSystem(self)


class DiscreteSystem:
    """Frozen sparse nonlinear system r(x, p) with a linear objective c@x.

    Equality rows satisfy r = 0, inequality rows r <= 0. The parameter vector
    `params` may be overwritten in place between evaluations; `make_nlp`
    returns callbacks bound to the live parameter vector, so updating
    parameters and re-solving reuses the same problem object.
    """

    def __init__(self, b: SystemBuilder):
        self.num_vars = len(b._var_list)
        self.num_rows = len(b._row_list)
        self.var_list = tuple(b._var_list)
        self.row_list = tuple(b._row_list)
        self._var_index = dict(b._var_index)
        self._param_index = dict(b._param_index)
        self.param_list = tuple(b._param_list)
        self.params = np.asarray(b._param_values, dtype=float)
        self.lower = np.asarray(b._lower, dtype=float)
        self.upper = np.asarray(b._upper, dtype=float)
        self.start = np.asarray(b._start, dtype=float)
        is_eq = np.asarray(b._row_is_eq, dtype=bool)
        self.eq_rows = np.flatnonzero(is_eq)
        self.ineq_rows = np.flatnonzero(~is_eq)

        nr, nv, npar = self.num_rows, self.num_vars, len(self.params)
        self._A = sp.csr_matrix(
            (b._lin_vals, (b._lin_rows, b._lin_cols)), shape=(nr, nv))
        self._B = sp.csr_matrix(
            (b._par_vals, (b._par_rows, b._par_cols)), shape=(nr, npar))
        self._const = np.zeros(nr)
        for row, val in b._const.items():
            self._const[row] += val

        self._A_coo = self._A.tocoo()
        prod = b._prod
        self._prod_rows = np.asarray(prod.rows, dtype=int)
        self._prod_c = np.asarray(prod.coeff, dtype=float)
        self._prod_a = np.asarray(prod.col_a, dtype=int)
        self._prod_b = np.asarray(prod.col_b, dtype=int)
        fric = b._fric
        self._fric_rows = np.asarray(fric.rows, dtype=int)
        self._fric_c = np.asarray(fric.coeff, dtype=float)
        self._fric_ra = np.asarray(fric.rho_a, dtype=int)
        self._fric_rb = np.asarray(fric.rho_b, dtype=int)
        self._fric_wa = np.asarray(fric.w_a, dtype=float)
        self._fric_wb = np.asarray(fric.w_b, dtype=float)
        self._fric_sa = np.asarray(fric.vel_a, dtype=int)
        self._fric_sb = np.asarray(fric.vel_b, dtype=int)
        self._fric_va = np.asarray(fric.v_a, dtype=float)
        self._fric_vb = np.asarray(fric.v_b, dtype=float)
        powr = b._power
        self._pow_rows = np.asarray(powr.rows, dtype=int)
        self._pow_c = np.asarray(powr.coeff, dtype=float)
        self._pow_f = np.asarray(powr.col_flow, dtype=int)
        self._pow_b = np.asarray(powr.col_boost, dtype=int)
        self._pow_k = np.asarray(powr.exponent, dtype=float)
        sq = b._sqdev
        self._sq_rows = np.asarray(sq.rows, dtype=int)
        self._sq_c = np.asarray(sq.coeff, dtype=float)
        self._sq_col = np.asarray(sq.col, dtype=int)
        self._sq_ref = np.asarray(sq.ref_param, dtype=int)

        self.objective_coeffs = np.zeros(nv)
        for col, coeff in b._obj.items():
            self.objective_coeffs[col] += coeff

        self._eps2 = FRICTION_EPS_VELOCITY ** 2
        # constant sparsity pattern of the Jacobian's nonlinear part
        self._jac_nl_rows = np.concatenate([
            self._prod_rows, self._prod_rows,
            self._fric_rows, self._fric_rows, self._fric_rows, self._fric_rows,
            self._pow_rows, self._pow_rows,
            self._sq_rows,
        ]) if nr else np.zeros(0, dtype=int)
        self._jac_nl_cols = np.concatenate([
            self._prod_a, self._prod_b,
            self._fric_ra, self._fric_rb, self._fric_sa, self._fric_sb,
            self._pow_f, self._pow_b,
            self._sq_col,
        ]) if nr else np.zeros(0, dtype=int)

    # ---- lookups -----------------------------------------------------------

    def column(self, index: VariableIndex) -> int:
        return self._var_index[index]

    def param_slot(self, index: ParamIndex) -> int:
        return self._param_index[index]

    def set_param(self, index: ParamIndex, value: float) -> None:
        self.params[self._param_index[index]] = value

    def has_param(self, index: ParamIndex) -> bool:
        return index in self._param_index

    # ---- evaluation --------------------------------------------------------

    def _friction_parts(self, x):
        rho = self._fric_wa * x[self._fric_ra] + self._fric_wb * x[self._fric_rb]
        vel = self._fric_va * x[self._fric_sa] + self._fric_vb * x[self._fric_sb]
        root = np.sqrt(vel * vel + self._eps2)
        return rho, vel, root

    def residual(self, x: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        p = self.params if params is None else params
        r = self._A @ x + self._B @ p + self._const
        nr = self.num_rows
        if self._prod_rows.size:
            r += np.bincount(self._prod_rows,
                             weights=self._prod_c * x[self._prod_a] * x[self._prod_b],
                             minlength=nr)
        if self._fric_rows.size:
            rho, vel, root = self._friction_parts(x)
            r += np.bincount(self._fric_rows, weights=self._fric_c * rho * vel * root,
                             minlength=nr)
        if self._pow_rows.size:
            r += np.bincount(
                self._pow_rows,
                weights=self._pow_c * x[self._pow_f] * (x[self._pow_b] ** self._pow_k - 1.0),
                minlength=nr)
        if self._sq_rows.size:
            dev = x[self._sq_col] - p[self._sq_ref]
            r += np.bincount(self._sq_rows, weights=self._sq_c * dev * dev, minlength=nr)
        return r

    def jacobian(self, x: np.ndarray, params: np.ndarray | None = None) -> sp.csr_matrix:
        p = self.params if params is None else params
        data = []
        if self._prod_rows.size or self._fric_rows.size or self._pow_rows.size or self._sq_rows.size:
            data.append(self._prod_c * x[self._prod_b])
            data.append(self._prod_c * x[self._prod_a])
            rho, vel, root = self._friction_parts(x)
            w_val = vel * root
            w_prime = (2.0 * vel * vel + self._eps2) / root
            data.append(self._fric_c * self._fric_wa * w_val)
            data.append(self._fric_c * self._fric_wb * w_val)
            data.append(self._fric_c * rho * w_prime * self._fric_va)
            data.append(self._fric_c * rho * w_prime * self._fric_vb)
            beta = x[self._pow_b]
            data.append(self._pow_c * (beta ** self._pow_k - 1.0))
            data.append(self._pow_c * x[self._pow_f] * self._pow_k * beta ** (self._pow_k - 1.0))
            data.append(2.0 * self._sq_c * (x[self._sq_col] - p[self._sq_ref]))
            nl = sp.csr_matrix(
                (np.concatenate(data), (self._jac_nl_rows, self._jac_nl_cols)),
                shape=(self.num_rows, self.num_vars))
            return self._A + nl
        return self._A.copy()

    def hessian(self, x: np.ndarray, y: np.ndarray) -> sp.coo_matrix:
        """Weighted sum of row Hessians, y indexed over all rows."""
        rows, cols, vals = [], [], []
        if self._prod_rows.size:
            yv = y[self._prod_rows] * self._prod_c
            rows += [self._prod_a, self._prod_b]
            cols += [self._prod_b, self._prod_a]
            vals += [yv, yv]
        if self._fric_rows.size:
            rho, vel, root = self._friction_parts(x)
            w_prime = (2.0 * vel * vel + self._eps2) / root
            w_second = vel * (2.0 * vel * vel + 3.0 * self._eps2) / root ** 3
            yc = y[self._fric_rows] * self._fric_c
            for r_col, r_wt in ((self._fric_ra, self._fric_wa), (self._fric_rb, self._fric_wb)):
                for s_col, s_wt in ((self._fric_sa, self._fric_va), (self._fric_sb, self._fric_vb)):
                    cross = yc * r_wt * w_prime * s_wt
                    rows += [r_col, s_col]
                    cols += [s_col, r_col]
                    vals += [cross, cross]
            for sa_col, sa_wt in ((self._fric_sa, self._fric_va), (self._fric_sb, self._fric_vb)):
                for sb_col, sb_wt in ((self._fric_sa, self._fric_va), (self._fric_sb, self._fric_vb)):
                    rows.append(sa_col)
                    cols.append(sb_col)
                    vals.append(yc * rho * w_second * sa_wt * sb_wt)
        if self._pow_rows.size:
            beta = x[self._pow_b]
            yc = y[self._pow_rows] * self._pow_c
            cross = yc * self._pow_k * beta ** (self._pow_k - 1.0)
            rows += [self._pow_f, self._pow_b]
            cols += [self._pow_b, self._pow_f]
            vals += [cross, cross]
            rows.append(self._pow_b)
            cols.append(self._pow_b)
            vals.append(yc * x[self._pow_f] * self._pow_k * (self._pow_k - 1.0)
                        * beta ** (self._pow_k - 2.0))
        if self._sq_rows.size:
            rows.append(self._sq_col)
            cols.append(self._sq_col)
            vals.append(2.0 * y[self._sq_rows] * self._sq_c)
        if not rows:
            return sp.coo_matrix((self.num_vars, self.num_vars))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.num_vars, self.num_vars))

    # ---- NLP view ----------------------------------------------------------

    def make_nlp(self, name: str = "") -> SparseNlp:
        eq, ineq = self.eq_rows, self.ineq_rows
        c_obj = self.objective_coeffs

        def full_y(y_eq, y_ineq):
            y = np.zeros(self.num_rows)
            if eq.size:
                y[eq] = y_eq
            if ineq.size:
                y[ineq] = y_ineq
            return y

        return SparseNlp(
            n=self.num_vars,
            objective=lambda x: float(c_obj @ x),
            gradient=lambda x: c_obj.copy(),
            lower=self.lower.copy(),
            upper=self.upper.copy(),
            x0=self.start.copy(),
            num_eq=int(eq.size),
            eq_residual=lambda x: self.residual(x)[eq],
            eq_jacobian=lambda x: self.jacobian(x)[eq],
            num_ineq=int(ineq.size),
            ineq_residual=(lambda x: self.residual(x)[ineq]) if ineq.size else None,
            ineq_jacobian=(lambda x: self.jacobian(x)[ineq]) if ineq.size else None,
            lagrangian_hessian=lambda x, w, ye, yi: self.hessian(x, full_y(ye, yi)),
            name=name,
        )


# ---------------------------------------------------------------------------
# network emission
# ---------------------------------------------------------------------------

PrevDensity = Callable[[str, int], tuple[str, int]]
"""Accessor (pipe_id, cell) -> ("var", column) or ("param", slot) giving the
density at the previous time level."""


@dataclass
class StepVarColumns:
    """Column handles for one (time step, scenario) slice of the system."""

    node_pressure: dict[str, int] = field(default_factory=dict)
    source_flow: dict[str, int] = field(default_factory=dict)
    density: dict[tuple[str, int], int] = field(default_factory=dict)
    velocity: dict[tuple[str, int], int] = field(default_factory=dict)
    cell_pressure: dict[tuple[str, int], int] = field(default_factory=dict)
    flow_in: dict[str, int] = field(default_factory=dict)
    flow_out: dict[str, int] = field(default_factory=dict)
    boost: dict[str, int] = field(default_factory=dict)
    comp_flow: dict[str, int] = field(default_factory=dict)
    power: dict[str, int] = field(default_factory=dict)


@dataclass
class HorizonHandles:
    """Lookup tables produced while emitting a network horizon."""

    steps: dict[tuple[int, int], StepVarColumns] = field(default_factory=dict)  # (t, scen)
    demand_params: dict[tuple[str, int, int], int] = field(default_factory=dict)
    initial_density_params: dict[tuple[str, int], int] = field(default_factory=dict)

    def step(self, t: int, scenario: int = 0) -> StepVarColumns:
        return self.steps[(t, scenario)]


def _global_pressure_range(net: NetworkModel) -> tuple[float, float]:
    lows = [n.pressure_min for n in net.nodes]
    highs = [n.pressure_max for n in net.nodes]
    return min(lows), max(highs)


def _nominal_demand_fn(net: NetworkModel) -> Callable[[str, int], float]:
    """Default demand lookup: the sink's nominal profile at phase t-1."""

    def demand(sink: str, t: int) -> float:
        profile = net.demands.get(sink)
        if profile is None:
            return 0.0
        return float(profile.values[(t - 1) % profile.period_steps])

    return demand


def _mean_demands(net: NetworkModel) -> dict[str, float]:
    return {
        sink: float(np.mean(profile.values)) for sink, profile in net.demands.items()
    }


def _source_pressure_guess(net: NetworkModel) -> float:
    pset = [n.fixed_pressure for n in net.nodes
            if n.kind == NodeKind.SOURCE_FIXED_PRESSURE and n.fixed_pressure is not None]
    return pset[0] if pset else 40e5


def steady_flow_guess(net: NetworkModel, demands: dict[str, float]) -> dict[str, float]:
    """Least-squares edge flows (kg/s) satisfying the node balances.

    Unknowns are one flow per pipe and per compressor; fixed-pressure sources
    get a free supply column. Used only to seed solver start points.
    """
    edges = [(p.id, p.from_node, p.to_node) for p in net.pipes]
    edges += [(c.id, c.from_node, c.to_node) for c in net.compressors]
    supply_nodes = [n.id for n in net.nodes if n.kind == NodeKind.SOURCE_FIXED_PRESSURE]
    node_pos = {n.id: i for i, n in enumerate(net.nodes)}
    ncols = len(edges) + len(supply_nodes)
    A = np.zeros((len(net.nodes), ncols))
    b = np.zeros(len(net.nodes))
    for j, (_, frm, to) in enumerate(edges):
        A[node_pos[frm], j] -= 1.0
        A[node_pos[to], j] += 1.0
    for j, nid in enumerate(supply_nodes):
        A[node_pos[nid], len(edges) + j] += 1.0
    for n in net.nodes:
        if n.kind == NodeKind.SINK:
            b[node_pos[n.id]] += demands.get(n.id, 0.0)
        elif n.kind == NodeKind.SOURCE_FIXED_FLOW:
            b[node_pos[n.id]] -= n.fixed_flow or 0.0
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return {eid: float(sol[j]) for j, (eid, _, _) in enumerate(edges)}


def add_network_step(
    b: SystemBuilder,
    net: NetworkModel,
    scaling: Scaling,
    *,
    t: int,
    scenario: int,
    dt_seconds: float,
    prev_density: PrevDensity,
    demand_param: Callable[[str], int],
    flow_guess: dict[str, float] | None = None,
    pressure_guess: float | None = None,
    shared_power_column: Callable[[str], int | None] | None = None,
    relax_sink_pressure_floor: bool = False,
    predeclared_density: dict[tuple[str, int], int] | None = None,
) -> StepVarColumns:
    """Emit all variables and residual rows of one implicit time step.

    `prev_density` supplies the density at the previous time level (a
    parameter slot for the first step, a variable column otherwise, or a
    current-period column for time-periodic systems). `demand_param` maps a
    sink id to the parameter slot holding its scaled offtake this step.
    `shared_power_column` may return an existing power column so several
    scenarios reuse one actuator decision (non-anticipativity); when it
    returns None a fresh column is created.
    """
    gas = net.gas
    u = scaling
    p_lo_glob, p_hi_glob = _global_pressure_range(net)
    p_lo_s, p_hi_s = p_lo_glob / u.pressure, p_hi_glob / u.pressure
    fg = flow_guess or {}
    p_guess = pressure_guess if pressure_guess is not None else 0.5 * (p_lo_s + p_hi_s)
    cols = StepVarColumns()

    # node-level variables
    for n in net.nodes:
        lo, hi = n.pressure_min / u.pressure, n.pressure_max / u.pressure
        if relax_sink_pressure_floor and n.kind == NodeKind.SINK:
            lo = p_lo_s
        start = n.fixed_pressure / u.pressure if n.fixed_pressure is not None else p_guess
        cols.node_pressure[n.id] = b.new_var(
            VariableIndex("node_pressure", n.id, -1, t, scenario), lo, hi, start)
        if n.kind == NodeKind.SOURCE_FIXED_PRESSURE:
            cols.source_flow[n.id] = b.new_var(
                VariableIndex("source_flow", n.id, -1, t, scenario),
                0.0, 1000.0 / u.mass_flow, 5.0 / u.mass_flow)

    # compressor variables
    for c in net.compressors:
        cols.boost[c.id] = b.new_var(
            VariableIndex("boost", c.id, -1, t, scenario),
            c.beta_min, c.beta_max, max(1.05, c.beta_min * 1.01))
        cols.comp_flow[c.id] = b.new_var(
            VariableIndex("comp_flow", c.id, -1, t, scenario),
            0.0, 500.0 / u.mass_flow, max(fg.get(c.id, 1.0), 0.1) / u.mass_flow)
        shared = shared_power_column(c.id) if shared_power_column else None
        if shared is None:
            guess_w = compressor_power(gas, max(fg.get(c.id, 1.0), 0.1), 1.05, c.efficiency)
            p_cap = np.inf if c.power_max is None else c.power_max / u.power
            # no explicit lower bound: the defining row with flow >= 0 and
            # ratio >= 1 already implies nonnegative power, and a bound at 0
            # would degenerate whenever an idle compressor is pinned there
            cols.power[c.id] = b.new_var(
                VariableIndex("power", c.id, -1, t, scenario),
                -np.inf, p_cap, guess_w / u.power)
        else:
            cols.power[c.id] = shared

    # pipe variables and rows
    for pipe in net.pipes:
        m = pipe.num_cells
        dx = pipe.cell_length
        area = pipe.area
        inv_flow = u.mass_flow / (area * u.density * u.velocity)  # scaled flux per unit scaled flow
        c_time = dt_seconds * u.velocity / dx
        m_drop = (pipe.friction / (2.0 * pipe.diameter)) \
            * u.density * u.velocity ** 2 * dx / u.pressure
        vel_guess = fg.get(pipe.id, 1.0) * inv_flow / max(p_guess, 1.0)
        for j in range(m):
            if predeclared_density and (pipe.id, j) in predeclared_density:
                cols.density[(pipe.id, j)] = predeclared_density[(pipe.id, j)]
            else:
                cols.density[(pipe.id, j)] = b.new_var(
                    VariableIndex("density", pipe.id, j, t, scenario), p_lo_s, p_hi_s, p_guess)
            cols.velocity[(pipe.id, j)] = b.new_var(
                VariableIndex("velocity", pipe.id, j, t, scenario),
                -30.0 / u.velocity, 30.0 / u.velocity, vel_guess)
            cols.cell_pressure[(pipe.id, j)] = b.new_var(
                VariableIndex("pressure", pipe.id, j, t, scenario), p_lo_s, p_hi_s, p_guess)
        cols.flow_in[pipe.id] = b.new_var(
            VariableIndex("flow_in", pipe.id, -1, t, scenario),
            -500.0 / u.mass_flow, 500.0 / u.mass_flow, fg.get(pipe.id, 0.5) / u.mass_flow)
        cols.flow_out[pipe.id] = b.new_var(
            VariableIndex("flow_out", pipe.id, -1, t, scenario),
            -500.0 / u.mass_flow, 500.0 / u.mass_flow, fg.get(pipe.id, 0.5) / u.mass_flow)

        for j in range(m):
            # ideal-gas relation: scaled pressure equals scaled density
            row = b.new_row(RowIndex("eos", pipe.id, j, t, scenario))
            b.linear(row, cols.cell_pressure[(pipe.id, j)], 1.0)
            b.linear(row, cols.density[(pipe.id, j)], -1.0)

            # implicit mass balance with donor-cell face fluxes
            row = b.new_row(RowIndex("mass", pipe.id, j, t, scenario))
            b.linear(row, cols.density[(pipe.id, j)], 1.0)
            kind, slot = prev_density(pipe.id, j)
            if kind == "param":
                b.param_term(row, slot, -1.0)
            else:
                b.linear(row, slot, -1.0)
            # outgoing face flux of cell j
            b.product(row, c_time, cols.density[(pipe.id, j)], cols.velocity[(pipe.id, j)])
            # incoming face flux
            if j == 0:
                b.linear(row, cols.flow_in[pipe.id], -c_time * inv_flow)
            else:
                b.product(row, -c_time,
                          cols.density[(pipe.id, j - 1)], cols.velocity[(pipe.id, j - 1)])

        # outlet mass flow definition: flow = density * velocity * area
        row = b.new_row(RowIndex("outflow_def", pipe.id, -1, t, scenario))
        b.linear(row, cols.flow_out[pipe.id], 1.0)
        b.product(row, -1.0 / inv_flow,
                  cols.density[(pipe.id, m - 1)], cols.velocity[(pipe.id, m - 1)])

        # momentum / pressure-drop rows on the m+1 faces
        left_p = cols.node_pressure[pipe.from_node]
        right_p = cols.node_pressure[pipe.to_node]
        row = b.new_row(RowIndex("momentum", pipe.id, 0, t, scenario))
        b.linear(row, cols.cell_pressure[(pipe.id, 0)], 1.0)
        b.linear(row, left_p, -1.0)
        c0 = cols.density[(pipe.id, 0)]
        s0 = cols.velocity[(pipe.id, 0)]
        b.friction(row, 0.5 * m_drop, (c0, c0), (1.0, 0.0), (s0, s0), (1.0, 0.0))
        for j in range(1, m):
            row = b.new_row(RowIndex("momentum", pipe.id, j, t, scenario))
            b.linear(row, cols.cell_pressure[(pipe.id, j)], 1.0)
            b.linear(row, cols.cell_pressure[(pipe.id, j - 1)], -1.0)
            b.friction(row, m_drop,
                       (cols.density[(pipe.id, j - 1)], cols.density[(pipe.id, j)]),
                       (0.5, 0.5),
                       (cols.velocity[(pipe.id, j - 1)], cols.velocity[(pipe.id, j)]),
                       (0.5, 0.5))
        row = b.new_row(RowIndex("momentum", pipe.id, m, t, scenario))
        b.linear(row, right_p, 1.0)
        b.linear(row, cols.cell_pressure[(pipe.id, m - 1)], -1.0)
        cm = cols.density[(pipe.id, m - 1)]
        sm = cols.velocity[(pipe.id, m - 1)]
        b.friction(row, 0.5 * m_drop, (cm, cm), (1.0, 0.0), (sm, sm), (1.0, 0.0))

    # node balance rows (and pressure pins for fixed-pressure sources)
    for n in net.nodes:
        row = b.new_row(RowIndex("node_balance", n.id, -1, t, scenario))
        for pipe in net.pipes:
            if pipe.to_node == n.id:
                b.linear(row, cols.flow_out[pipe.id], 1.0)
            if pipe.from_node == n.id:
                b.linear(row, cols.flow_in[pipe.id], -1.0)
        for c in net.compressors:
            if c.to_node == n.id:
                b.linear(row, cols.comp_flow[c.id], 1.0)
            if c.from_node == n.id:
                b.linear(row, cols.comp_flow[c.id], -1.0)
        if n.kind == NodeKind.SOURCE_FIXED_PRESSURE:
            b.linear(row, cols.source_flow[n.id], 1.0)
            pin = b.new_row(RowIndex("source_pressure", n.id, -1, t, scenario))
            b.linear(pin, cols.node_pressure[n.id], 1.0)
            pset = b.get_or_create_param(
                ParamIndex("pressure_set", n.id, -1, 0, 0), n.fixed_pressure / u.pressure)
            b.param_term(pin, pset, -1.0)
        elif n.kind == NodeKind.SOURCE_FIXED_FLOW:
            slot = b.get_or_create_param(
                ParamIndex("fixed_flow", n.id, -1, 0, 0), (n.fixed_flow or 0.0) / u.mass_flow)
            b.param_term(row, slot, 1.0)
        elif n.kind == NodeKind.SINK:
            b.param_term(row, demand_param(n.id), -1.0)

    # compressor rows
    kappa = 1.0 - 1.0 / gas.heat_capacity_ratio
    for c in net.compressors:
        row = b.new_row(RowIndex("boost", c.id, -1, t, scenario))
        b.linear(row, cols.node_pressure[c.to_node], 1.0)
        b.product(row, -1.0, cols.boost[c.id], cols.node_pressure[c.from_node])
        row = b.new_row(RowIndex("power_def", c.id, -1, t, scenario))
        b.linear(row, cols.power[c.id], 1.0)
        coeff = u.mass_flow * gas.specific_heat * gas.temperature / (c.efficiency * u.power)
        b.power_term(row, -coeff, cols.comp_flow[c.id], cols.boost[c.id], kappa)
    return cols


def add_network_horizon(
    b: SystemBuilder,
    net: NetworkModel,
    scaling: Scaling,
    horizon: Horizon,
    *,
    scenario: int = 0,
    demand_values: Callable[[str, int], float] | None = None,
    shared_power_column: Callable[[str, int], int | None] | None = None,
    relax_sink_pressure_floor: bool = False,
    energy_weight: float = 1.0,
    initial_density_value: float | None = None,
) -> HorizonHandles:
    """Emit a full horizon for one scenario, rooted at a shared initial state.

    Initial cell densities are parameters (shared across scenarios via
    get-or-create). Demands are per-(sink, step, scenario) parameters with
    default values from `demand_values` (SI kg/s), falling back to the nominal
    profile of each sink. The objective gains
    `energy_weight * step_hours * power` for every compressor power column
    created here (shared columns accumulate weight from every scenario that
    reuses them, so scenario probabilities add up naturally).
    """
    handles = HorizonHandles()
    u = scaling
    dem = demand_values or _nominal_demand_fn(net)
    fg = steady_flow_guess(net, _mean_demands(net))
    p_guess = _source_pressure_guess(net) / u.pressure

    if initial_density_value is None:
        initial_density_value = p_guess

    for pipe in net.pipes:
        for j in range(pipe.num_cells):
            handles.initial_density_params[(pipe.id, j)] = b.get_or_create_param(
                ParamIndex("initial_density", pipe.id, j, 0, 0), initial_density_value)

    prev_cols: dict[tuple[str, int], int] = {}
    for t in range(1, horizon.num_steps + 1):
        if t == 1:
            def prev_density(pid, j):
                return ("param", handles.initial_density_params[(pid, j)])
        else:
            captured = dict(prev_cols)

            def prev_density(pid, j, _c=captured):
                return ("var", _c[(pid, j)])

        def demand_param(sink, _t=t):
            key = (sink, _t, scenario)
            if key not in handles.demand_params:
                handles.demand_params[key] = b.new_param(
                    ParamIndex("demand", sink, -1, _t, scenario),
                    dem(sink, _t) / u.mass_flow)
            return handles.demand_params[key]

        share = (lambda cid, _t=t: shared_power_column(cid, _t)) if shared_power_column else None
        cols = add_network_step(
            b, net, scaling, t=t, scenario=scenario,
            dt_seconds=horizon.step_seconds, prev_density=prev_density,
            demand_param=demand_param, flow_guess=fg, pressure_guess=p_guess,
            shared_power_column=share,
            relax_sink_pressure_floor=relax_sink_pressure_floor)
        handles.steps[(t, scenario)] = cols
        prev_cols = dict(cols.density)
        for cid, col in cols.power.items():
            b.objective_linear(col, energy_weight * horizon.step_hours)
    return handles


def add_network_period(
    b: SystemBuilder,
    net: NetworkModel,
    scaling: Scaling,
    period_steps: int,
    dt_seconds: float,
    *,
    demand_values: Callable[[str, int], float] | None = None,
) -> HorizonHandles:
    """Emit one time-periodic operating cycle (step 1 wraps to the last step).

    There is no initial-state parameter: the density entering step 1 is the
    density at the final step, making every trajectory produced here exactly
    periodic. Demand for step t defaults to the sink profile value at phase
    t - 1.
    """
    handles = HorizonHandles()
    u = scaling
    horizon = Horizon(period_steps, dt_seconds)
    dem = demand_values or _nominal_demand_fn(net)
    fg = steady_flow_guess(net, _mean_demands(net))
    p_guess = _source_pressure_guess(net) / u.pressure

    # pre-create the final step's density columns so step 1 can reference
    # them for the periodic wrap before step K is emitted
    p_lo_glob, p_hi_glob = _global_pressure_range(net)
    last_density: dict[tuple[str, int], int] = {}
    for pipe in net.pipes:
        for j in range(pipe.num_cells):
            last_density[(pipe.id, j)] = b.new_var(
                VariableIndex("density", pipe.id, j, period_steps, 0),
                p_lo_glob / u.pressure, p_hi_glob / u.pressure, p_guess)

    prev_cols: dict[tuple[str, int], int] = {}
    for t in range(1, period_steps + 1):
        if t == 1:
            def prev_density(pid, j):
                return ("var", last_density[(pid, j)])
        else:
            captured = dict(prev_cols)

            def prev_density(pid, j, _c=captured):
                return ("var", _c[(pid, j)])

        def demand_param(sink, _t=t):
            key = (sink, _t, 0)
            if key not in handles.demand_params:
                handles.demand_params[key] = b.new_param(
                    ParamIndex("demand", sink, -1, _t, 0), dem(sink, _t) / u.mass_flow)
            return handles.demand_params[key]

        cols = add_network_step(
            b, net, scaling, t=t, scenario=0, dt_seconds=dt_seconds,
            prev_density=prev_density, demand_param=demand_param,
            flow_guess=fg, pressure_guess=p_guess,
            predeclared_density=last_density if t == period_steps else None)
        handles.steps[(t, 0)] = cols
        prev_cols = dict(cols.density)
        for cid, col in cols.power.items():
            b.objective_linear(col, horizon.step_hours)
    return handles
