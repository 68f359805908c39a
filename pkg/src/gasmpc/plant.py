"""One-step plant simulation and closed-loop orchestration.

The plant advances the same finite-volume network model the controllers use,
one implicit step at a time: compressor powers are pinned to the applied
controls, realized sink demands are hard withdrawals, and the resulting
square nonlinear system is solved by a damped Newton iteration.  Contract
pressure floors are *not* imposed on the plant physics — dips below them are
measured afterwards and reported as violations.  When the pinned step has no
physical solution, an elastic resolve relaxes, in priority order, sink
delivery (shortfall) and then sink pressure floors (slack), and the step
report says which relaxation activated and by how much.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .controller import ControllerConfig, EnmpcController
from .css import CssSolution, demand_table, solve_css
from .discretize import (
    Horizon,
    ParamIndex,
    RowIndex,
    Scaling,
    SystemBuilder,
    VariableIndex,
    add_network_horizon,
)
from .network import NetworkModel, NodeKind
from .nlp.ipm import InteriorPointSolver
from .nlp.problem import SolverOptions

# A sink pressure below its contracted floor by more than this margin counts
# as a violation; smaller dips are within measurement/solver noise.
VIOLATION_TOL_PA = 100.0

# Delivery shortfall (kg/s, scaled) below this is treated as zero.
SHORTFALL_TOL = 1e-9

_NEWTON_TOL = 1e-11
_NEWTON_MAX_ITER = 60

# Elastic objective weights: shedding delivery must be cheaper than letting a
# contracted pressure floor go, so the floor slack only activates once demand
# relief alone cannot restore a physical state.
_W_SHORTFALL = 1.0
_W_FLOOR = 1.0e3


class PlantError(RuntimeError):
    """Unrecoverable plant failure (elastic resolve failed); aborts the run."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


def state_cell_order(net: NetworkModel) -> list[tuple[str, int]]:
    """Canonical (pipe, cell) ordering of the density state vector."""
    return [(p.id, c) for p in net.pipes for c in range(p.num_cells)]


# ---------------------------------------------------------------------------
# demand uncertainty
# ---------------------------------------------------------------------------


class UncertaintyMode(enum.Enum):
    NOMINAL = "nominal"
    UNIFORM_ENVELOPE = "uniform_envelope"
    REPLAY = "replay"


@dataclass(frozen=True)
class UncertaintyRealization:
    """How realized sink demands are produced during a closed-loop run.

    NOMINAL replays each sink's nominal profile.  UNIFORM_ENVELOPE draws the
    demand of every sink at every step independently and uniformly from the
    sink's envelope at the matching cycle phase; the stream for step k is
    seeded with (seed, k), so realizations are reproducible and independent
    of how many steps were simulated before.  REPLAY feeds back a recorded
    trace (per-sink arrays indexed by step).
    """

    mode: UncertaintyMode = UncertaintyMode.NOMINAL
    seed: int = 0
    trace: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.mode is UncertaintyMode.REPLAY and self.trace is None:
            raise ValueError("replay mode needs a recorded demand trace")

    def demands_at(self, net: NetworkModel, step: int, phase: int) -> dict[str, float]:
        """Realized demand (kg/s) of every sink for one step."""
        if self.mode is UncertaintyMode.REPLAY:
            out = {}
            for sink in net.sink_ids:
                series = self.trace.get(sink)
                if series is None or step >= len(series):
                    raise PlantError(f"replay trace has no demand for sink {sink!r}",
                                     step=step)
                out[sink] = float(series[step])
            return out

        out = {}
        rng = None
        if self.mode is UncertaintyMode.UNIFORM_ENVELOPE:
            rng = np.random.default_rng([self.seed, step])
        for sink in net.sink_ids:
            profile = net.demands.get(sink)
            if profile is None:
                out[sink] = 0.0
                continue
            if rng is None:
                values = profile.values
                out[sink] = float(values[phase % len(values)])
            else:
                lo = profile.envelope_min[phase % len(profile.envelope_min)]
                hi = profile.envelope_max[phase % len(profile.envelope_max)]
                out[sink] = float(rng.uniform(lo, hi))
        return out


# ---------------------------------------------------------------------------
# one-step plant
# ---------------------------------------------------------------------------


@dataclass
class PlantStepReport:
    """What happened while advancing the plant by one step."""

    mode: str                          # "direct" | "elastic"
    newton_iterations: int
    residual_norm: float               # final residual of the direct solve
    shortfall: dict[str, float]        # undelivered demand per sink (kg/s)
    floor_violation_pa: dict[str, float]  # pressure below contract floor (Pa)
    sink_pressures: dict[str, float]   # bar
    boosts: dict[str, float]
    comp_flows: dict[str, float]       # kg/s
    source_flows: dict[str, float]     # kg/s
    pipe_flows_in: dict[str, float]    # kg/s
    pipe_flows_out: dict[str, float]   # kg/s
    cell_pressures: dict[tuple[str, int], float]  # bar
    stage_energy_mwh: float
    mass_balance_rel_error: float

    @property
    def total_shortfall(self) -> float:
        return sum(self.shortfall.values())

    @property
    def max_floor_violation_pa(self) -> float:
        return max(self.floor_violation_pa.values(), default=0.0)


class PlantSimulator:
    """Advances the network state one implicit step per applied control.

    Both the direct (square) and the elastic one-step systems are built once;
    every step only rewrites parameter values.  The direct system pins each
    compressor power to its applied value, which makes variables and residual
    rows equinumerous, and is solved ignoring variable bounds: the plant obeys
    physics, not operating limits, and limit breaches are reported instead of
    enforced.
    """

    def __init__(self, net: NetworkModel, *, dt_seconds: float = 3600.0,
                 solver_options: SolverOptions | None = None):
        self.net = net
        self.dt_seconds = dt_seconds
        self.scaling = Scaling.for_gas(net.gas)
        self.cell_order = state_cell_order(net)
        self.comp_ids = [c.id for c in net.compressors]
        self._elastic_options = solver_options or SolverOptions(max_iter=300)
        self._floor_bar = {
            n.id: n.pressure_min / self.scaling.pressure
            for n in net.nodes if n.kind is NodeKind.SINK}
        self._fixed_supply = sum(
            (n.fixed_flow or 0.0) for n in net.nodes
            if n.kind is NodeKind.SOURCE_FIXED_FLOW)
        self._cell_mass = {}
        for pipe in net.pipes:
            for j in range(pipe.num_cells):
                self._cell_mass[(pipe.id, j)] = (
                    self.scaling.density * pipe.area * pipe.cell_length)
        self._build_direct()
        self._build_elastic()
        self._x_direct: np.ndarray | None = None

    # -- construction ------------------------------------------------------

    def _pin_rows(self, b: SystemBuilder, cols) -> None:
        """Equality rows fixing each compressor power to an applied value."""
        for cid in self.comp_ids:
            slot = b.new_param(ParamIndex("control_pin", cid, -1, 0, 0), 1.0)
            row = b.new_row(RowIndex("control_pin", cid, -1, 1, 0))
            b.linear(row, cols.power[cid], 1.0)
            b.param_term(row, slot, -1.0)

    def _build_direct(self) -> None:
        b = SystemBuilder()
        h = add_network_horizon(b, self.net, self.scaling,
                                Horizon(1, self.dt_seconds))
        self._pin_rows(b, h.steps[(1, 0)])
        self.system = b.freeze()
        self._handles = h
        cols = h.steps[(1, 0)]
        self._density_cols = dict(cols.density)
        self._power_cols = dict(cols.power)
        self._cols = cols

    def _build_elastic(self) -> None:
        b = SystemBuilder()
        h = add_network_horizon(b, self.net, self.scaling,
                                Horizon(1, self.dt_seconds),
                                relax_sink_pressure_floor=True)
        cols = h.steps[(1, 0)]
        self._pin_rows(b, cols)
        # With power pinned, each boost ratio is already determined by its
        # defining equality (an idle compressor sits at ratio 1 exactly), so
        # the operational ratio range would only wedge the solve against a
        # bound the equations force; realized ratios are reported instead.
        for cid in self.comp_ids:
            b.set_bounds(cols.boost[cid], 0.05, np.inf)
        shortfall_cols: dict[str, int] = {}
        slack_cols: dict[str, int] = {}
        for sink in self.net.sink_ids:
            col = b.new_var(VariableIndex("elastic", sink, 0, 1, 0),
                            0.0, np.inf, 0.0)
            shortfall_cols[sink] = col
            b.linear(b.row(RowIndex("node_balance", sink, -1, 1, 0)), col, 1.0)
            b.objective_linear(col, _W_SHORTFALL)
            # soft contract floor: floor - pressure - slack <= 0
            slack = b.new_var(VariableIndex("elastic", sink, 1, 1, 0),
                              0.0, np.inf, 0.0)
            slack_cols[sink] = slack
            row = b.new_row(RowIndex("floor_slack", sink, -1, 1, 0),
                            equality=False)
            b.const_term(row, self._floor_bar[sink])
            b.linear(row, cols.node_pressure[sink], -1.0)
            b.linear(row, slack, -1.0)
            b.objective_linear(slack, _W_FLOOR)
        self.system_elastic = b.freeze()
        self._handles_elastic = h
        self._cols_elastic = cols
        self._shortfall_cols = shortfall_cols
        self._slack_cols = slack_cols
        self._nlp_elastic = self.system_elastic.make_nlp("plant-elastic")

    # -- stepping ------------------------------------------------------------

    def _set_params(self, system, handles, densities: np.ndarray,
                    powers: dict[str, float], demands: dict[str, float]) -> None:
        for i, key in enumerate(self.cell_order):
            system.params[handles.initial_density_params[key]] = densities[i]
        for sink in self.net.sink_ids:
            system.params[handles.demand_params[(sink, 1, 0)]] = (
                demands[sink] / self.scaling.mass_flow)
        for cid in self.comp_ids:
            system.set_param(ParamIndex("control_pin", cid, -1, 0, 0), powers[cid])

    def _newton(self, x0: np.ndarray):
        """Damped Newton on the square pinned system; bounds play no part."""
        with np.errstate(all="ignore"):
            return self._newton_loop(x0)

    def _newton_loop(self, x0: np.ndarray):
        sys_ = self.system
        x = x0.copy()
        r = sys_.residual(x)
        norm = float(np.max(np.abs(r)))
        for it in range(_NEWTON_MAX_ITER):
            if not np.isfinite(norm):
                return None, it, norm
            if norm <= _NEWTON_TOL:
                return x, it, norm
            J = sys_.jacobian(x).tocsc()
            try:
                dx = spla.spsolve(J, -r)
            except Exception:
                return None, it, norm
            if not np.all(np.isfinite(dx)):
                return None, it, norm
            alpha, accepted = 1.0, False
            while alpha >= 1e-6:
                xn = x + alpha * dx
                rn = sys_.residual(xn)
                nn = float(np.max(np.abs(rn)))
                if np.isfinite(nn) and nn <= (1.0 - 1e-4 * alpha) * norm:
                    x, r, norm, accepted = xn, rn, nn, True
                    break
                alpha *= 0.5
            if not accepted:
                return None, it + 1, norm
        if norm <= _NEWTON_TOL:
            return x, _NEWTON_MAX_ITER, norm
        return None, _NEWTON_MAX_ITER, norm

    def _direct_guess(self, densities: np.ndarray,
                      powers: dict[str, float]) -> np.ndarray:
        if self._x_direct is not None:
            x = self._x_direct.copy()
        else:
            x = self.system.start.copy()
        for i, key in enumerate(self.cell_order):
            x[self._density_cols[key]] = densities[i]
            x[self._cols.cell_pressure[key]] = densities[i]
        for cid in self.comp_ids:
            x[self._power_cols[cid]] = powers[cid]
        return x

    def _physical(self, x: np.ndarray) -> bool:
        rho = np.array([x[self._density_cols[k]] for k in self.cell_order])
        return bool(np.all(np.isfinite(x)) and np.all(rho > 1e-9))

    def step(self, densities: np.ndarray, powers: dict[str, float],
             demands: dict[str, float], *, step_index: int | None = None
             ) -> tuple[np.ndarray, PlantStepReport]:
        """Advance one step under applied scaled powers and realized demands.

        `densities` is the scaled state in canonical cell order; `powers` maps
        compressor ids to applied scaled power; `demands` maps sink ids to
        realized offtake in kg/s.  Returns the next state and a step report.
        """
        densities = np.asarray(densities, dtype=float)
        self._set_params(self.system, self._handles, densities, powers, demands)
        x, iters, norm = self._newton(self._direct_guess(densities, powers))

        if x is not None and self._physical(x):
            self._x_direct = x.copy()
            report = self._report("direct", x, self._cols, densities, demands,
                                  powers, iters, norm, shortfall={})
            x_next = np.array([x[self._density_cols[k]] for k in self.cell_order])
            return x_next, report

        # elastic resolve: shed delivery first, give up the floor only if
        # shedding alone cannot restore a physical state
        self._set_params(self.system_elastic, self._handles_elastic,
                         densities, powers, demands)
        x0 = self.system_elastic.start.copy()
        n_direct = len(self.system.start)
        guess = self._direct_guess(densities, powers)
        x0[:n_direct] = np.where(np.isfinite(guess), guess, x0[:n_direct])
        sol = InteriorPointSolver(self._nlp_elastic, self._elastic_options).solve(x0=x0)
        if not sol.success:
            raise PlantError(
                "no physical plant state found: direct Newton "
                f"(residual {norm:.3e} after {iters} iterations) and elastic "
                f"resolve ({sol.status.value}) both failed", step=step_index)
        xs = sol.x
        shortfall = {}
        for sink, col in self._shortfall_cols.items():
            val = float(xs[col]) * self.scaling.mass_flow
            if val > SHORTFALL_TOL:
                shortfall[sink] = val
        cols = self._cols_elastic
        report = self._report("elastic", xs, cols, densities, demands,
                              powers, iters, norm, shortfall=shortfall)
        self._x_direct = None
        x_next = np.array([xs[cols.density[k]] for k in self.cell_order])
        return x_next, report

    def _report(self, mode, x, cols, densities0, demands, powers,
                newton_iters, norm, *, shortfall) -> PlantStepReport:
        u = self.scaling
        sink_p = {s: float(x[cols.node_pressure[s]]) for s in self.net.sink_ids}
        violations = {}
        for sink, p in sink_p.items():
            gap_pa = (self._floor_bar[sink] - p) * u.pressure
            if gap_pa > VIOLATION_TOL_PA:
                violations[sink] = gap_pa
        boosts = {c: float(x[cols.boost[c]]) for c in self.comp_ids}
        comp_flows = {c: float(x[cols.comp_flow[c]]) * u.mass_flow
                      for c in self.comp_ids}
        source_flows = {s: float(x[col]) * u.mass_flow
                        for s, col in cols.source_flow.items()}
        flows_in = {p: float(x[col]) * u.mass_flow
                    for p, col in cols.flow_in.items()}
        flows_out = {p: float(x[col]) * u.mass_flow
                     for p, col in cols.flow_out.items()}
        cell_p = {k: float(x[col]) for k, col in cols.cell_pressure.items()}
        energy = sum(powers.values()) * u.power * self.dt_seconds / 3.6e9

        lp0 = sum(densities0[i] * self._cell_mass[k]
                  for i, k in enumerate(self.cell_order))
        lp1 = sum(float(x[cols.density[k]]) * self._cell_mass[k]
                  for k in self.cell_order)
        supply = sum(source_flows.values()) + self._fixed_supply
        served = sum(demands.values()) - sum(shortfall.values())
        imbalance = (lp1 - lp0) - (supply - served) * self.dt_seconds
        scale = max(1.0, abs(lp1 - lp0), abs(supply) * self.dt_seconds)
        return PlantStepReport(
            mode=mode,
            newton_iterations=newton_iters,
            residual_norm=norm,
            shortfall=shortfall,
            floor_violation_pa=violations,
            sink_pressures=sink_p,
            boosts=boosts,
            comp_flows=comp_flows,
            source_flows=source_flows,
            pipe_flows_in=flows_in,
            pipe_flows_out=flows_out,
            cell_pressures=cell_p,
            stage_energy_mwh=energy,
            mass_balance_rel_error=abs(imbalance) / scale,
        )


# ---------------------------------------------------------------------------
# stability diagnostics
# ---------------------------------------------------------------------------


def isps_bounded(series: np.ndarray, *, transient: int = 24, ratio: float = 3.0,
                 window: int = 12, atol: float = 1e-6) -> dict:
    """Windowed boundedness check on an expected-distance series.

    After discarding the first `transient` entries, the series passes when its
    maximum stays within `ratio` times its median (or `atol`, whichever is
    larger, so fully decayed series pass trivially) and no `window` consecutive
    entries grow strictly monotonically.
    """
    series = np.asarray(series, dtype=float)
    post = series[transient:]
    post = post[np.isfinite(post)]
    if len(post) == 0:
        return {"ok": True, "max_post": 0.0, "median_post": 0.0,
                "bound": atol, "monotone_growth": False,
                "transient": transient, "window": window, "ratio": ratio,
                "note": "no post-transient samples"}
    med = float(np.median(post))
    mx = float(np.max(post))
    bound = max(ratio * med, atol)
    growth = False
    if len(post) >= window:
        rising = np.diff(post) > 0.0
        run = 0
        for r in rising:
            run = run + 1 if r else 0
            if run >= window - 1:
                growth = True
                break
    return {"ok": bool(mx <= bound and not growth), "max_post": mx,
            "median_post": med, "bound": bound, "monotone_growth": growth,
            "transient": transient, "window": window, "ratio": ratio}


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class ClosedLoopTrace:
    """Columnar record of one closed-loop run plus its metadata."""

    net: NetworkModel
    dt_seconds: float
    period_steps: int
    metadata: dict = field(default_factory=dict)

    steps: list[int] = field(default_factory=list)
    phases: list[int] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)   # x_k per step, plus final
    demands: dict[str, list[float]] = field(default_factory=dict)
    served: dict[str, list[float]] = field(default_factory=dict)
    shortfall: dict[str, list[float]] = field(default_factory=dict)
    sink_pressures: dict[str, list[float]] = field(default_factory=dict)
    violations_pa: dict[str, list[float]] = field(default_factory=dict)
    cell_pressures: dict[tuple[str, int], list[float]] = field(default_factory=dict)
    source_flows: dict[str, list[float]] = field(default_factory=dict)
    pipe_flows_in: dict[str, list[float]] = field(default_factory=dict)
    pipe_flows_out: dict[str, list[float]] = field(default_factory=dict)
    powers: dict[str, list[float]] = field(default_factory=dict)
    boosts: dict[str, list[float]] = field(default_factory=dict)
    comp_flows: dict[str, list[float]] = field(default_factory=dict)
    stage_energy_mwh: list[float] = field(default_factory=list)
    expected_distance: list[float] = field(default_factory=list)
    descent_bound: list[float] = field(default_factory=list)
    stability_slack: list[float] = field(default_factory=list)
    controller_status: list[str] = field(default_factory=list)
    controller_iterations: list[int] = field(default_factory=list)
    solve_seconds: list[float] = field(default_factory=list)
    fallback: list[bool] = field(default_factory=list)
    plant_mode: list[str] = field(default_factory=list)
    plant_newton_iterations: list[int] = field(default_factory=list)
    mass_balance_rel_error: list[float] = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def total_energy_mwh(self) -> float:
        return float(sum(self.stage_energy_mwh))

    def violation_steps(self) -> list[int]:
        """Steps on which any sink pressure broke its contract floor."""
        out = []
        for i in range(self.num_steps):
            if any(series[i] > 0.0 for series in self.violations_pa.values()):
                out.append(i)
        return out

    def max_violation_pa(self) -> float:
        worst = 0.0
        for series in self.violations_pa.values():
            if series:
                worst = max(worst, max(series))
        return worst

    def total_shortfall_kg(self) -> float:
        return float(sum(sum(s) for s in self.shortfall.values())) * self.dt_seconds

    # -- persistence -------------------------------------------------------

    def _meta_line(self) -> str:
        parts = [f"{k}={self.metadata[k]}" for k in sorted(self.metadata)]
        return "# " + " ".join(parts)

    def _write_csv(self, path: Path, columns: list[tuple[str, list]]) -> None:
        lines = [self._meta_line(), ",".join(name for name, _ in columns)]
        n = self.num_steps
        for i in range(n):
            cells = []
            for _, series in columns:
                v = series[i]
                if isinstance(v, bool):
                    cells.append("1" if v else "0")
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                elif isinstance(v, str):
                    cells.append(v)
                else:
                    cells.append(_fmt(v))
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")

    def write_csvs(self, outdir: Path) -> dict[str, Path]:
        """Write the four trace families; returns the paths by family name."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        base = [("loop.step.index", self.steps), ("loop.phase.index", self.phases)]

        pressures: list[tuple[str, list]] = list(base)
        for sink in self.net.sink_ids:
            pressures.append((f"{sink}.pressure.bar", self.sink_pressures[sink]))
        for sink in self.net.sink_ids:
            pressures.append((f"{sink}.floor_violation.Pa", self.violations_pa[sink]))
        for (pid, cell), series in self.cell_pressures.items():
            pressures.append((f"{pid}_c{cell}.pressure.bar", series))

        flows: list[tuple[str, list]] = list(base)
        for src, series in self.source_flows.items():
            flows.append((f"{src}.supply.kg_per_s", series))
        for sink in self.net.sink_ids:
            flows.append((f"{sink}.demand.kg_per_s", self.demands[sink]))
            flows.append((f"{sink}.served.kg_per_s", self.served[sink]))
            flows.append((f"{sink}.shortfall.kg_per_s", self.shortfall[sink]))
        for pid, series in self.pipe_flows_in.items():
            flows.append((f"{pid}.flow_in.kg_per_s", series))
        for pid, series in self.pipe_flows_out.items():
            flows.append((f"{pid}.flow_out.kg_per_s", series))

        compressors: list[tuple[str, list]] = list(base)
        for cid in self.powers:
            compressors.append((f"{cid}.power.MW", self.powers[cid]))
            compressors.append((f"{cid}.boost.ratio", self.boosts[cid]))
            compressors.append((f"{cid}.flow.kg_per_s", self.comp_flows[cid]))
        compressors.append(("total.stage_energy.MWh", self.stage_energy_mwh))

        stability: list[tuple[str, list]] = list(base)
        stability.extend([
            ("controller.expected_distance.scaled", self.expected_distance),
            ("controller.descent_bound.scaled", self.descent_bound),
            ("controller.slack.scaled", self.stability_slack),
            ("controller.status.text", self.controller_status),
            ("controller.iterations.count", self.controller_iterations),
            ("controller.solve_time.s", self.solve_seconds),
            ("controller.fallback.flag", self.fallback),
            ("plant.mode.text", self.plant_mode),
            ("plant.newton_iterations.count", self.plant_newton_iterations),
            ("plant.mass_balance_error.rel", self.mass_balance_rel_error),
        ])

        paths = {}
        for family, columns in (("pressures", pressures), ("flows", flows),
                                ("compressors", compressors), ("stability", stability)):
            path = outdir / f"{family}.csv"
            self._write_csv(path, columns)
            paths[family] = path
        return paths

    def summary(self) -> dict:
        """Run-level report: energy, violations, solver statistics, stability."""
        solve = np.asarray(self.solve_seconds, dtype=float)
        iters = np.asarray(self.controller_iterations, dtype=float)
        finite_v = [v for v in self.expected_distance if np.isfinite(v)]
        violation_steps = self.violation_steps()
        shortfall_steps = [
            i for i in range(self.num_steps)
            if any(series[i] > 0.0 for series in self.shortfall.values())]
        return {
            "metadata": dict(self.metadata),
            "num_steps": self.num_steps,
            "dt_seconds": self.dt_seconds,
            "total_energy_mwh": self.total_energy_mwh,
            "violations": {
                "pressure_steps": len(violation_steps),
                "pressure_step_indices": violation_steps,
                "max_pressure_violation_pa": self.max_violation_pa(),
                "shortfall_steps": len(shortfall_steps),
                "total_shortfall_kg": self.total_shortfall_kg(),
            },
            "solver": {
                "controller_fallbacks": int(sum(self.fallback)),
                "plant_elastic_steps": int(
                    sum(1 for m in self.plant_mode if m == "elastic")),
                "mean_iterations": float(iters.mean()) if len(iters) else 0.0,
                "max_iterations": int(iters.max()) if len(iters) else 0,
                "mean_solve_seconds": float(solve.mean()) if len(solve) else 0.0,
                "max_solve_seconds": float(solve.max()) if len(solve) else 0.0,
                "max_mass_balance_rel_error": float(
                    max(self.mass_balance_rel_error, default=0.0)),
            },
            "stability": {
                "initial_expected_distance": finite_v[0] if finite_v else None,
                "final_expected_distance": finite_v[-1] if finite_v else None,
                "max_expected_distance": max(finite_v) if finite_v else None,
                "isps": isps_bounded(np.asarray(self.expected_distance)),
            },
        }

    def write_summary(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def steady_initial_state(net: NetworkModel, period_steps: int,
                         dt_seconds: float, *, phase: int = 0,
                         level: str = "nominal") -> np.ndarray:
    """Scaled density state of the steady flow serving one fixed demand.

    Solves a one-step cyclic problem whose demand is frozen at the given cycle
    phase of the named level — the stationary operating point both plant and
    controller start from.
    """
    table = demand_table(net, period_steps, level=level)
    overrides = {sink: np.array([float(series[phase % period_steps])])
                 for sink, series in table.items()}
    css = solve_css(net, 1, dt_seconds, demand_overrides=overrides)
    return css.state_vector(state_cell_order(net), 0)


def run_closed_loop(net: NetworkModel, config: ControllerConfig,
                    uncertainty: UncertaintyRealization, num_steps: int,
                    css_by_level: dict[str, CssSolution], *,
                    initial_state: np.ndarray | None = None,
                    metadata: dict | None = None) -> ClosedLoopTrace:
    """Alternate controller and plant for `num_steps` steps.

    The controller decides each step's compressor powers from the measured
    state before the step's demand is realized; the plant then advances under
    the applied powers and the realized demands.  Runs are bit-reproducible
    for a fixed (configuration, seed) pair.  Controller solve failures fall
    back to reference feedforward and are recorded; unrecoverable plant
    failures raise PlantError tagged with the step index.
    """
    controller = EnmpcController(net, config, css_by_level)
    plant = PlantSimulator(net, dt_seconds=config.dt_seconds)
    if initial_state is None:
        x = steady_initial_state(net, config.period_steps, config.dt_seconds)
    else:
        x = np.asarray(initial_state, dtype=float).copy()

    trace = ClosedLoopTrace(net=net, dt_seconds=config.dt_seconds,
                            period_steps=config.period_steps,
                            metadata=dict(metadata or {}))
    trace.metadata.setdefault("network_hash", net.content_hash())
    trace.metadata.setdefault("uncertainty_mode", uncertainty.mode.value)
    trace.metadata.setdefault("seed", uncertainty.seed)
    trace.metadata.setdefault("nlp_variables", controller.system.num_vars)
    trace.metadata.setdefault(
        "nlp_constraints",
        len(controller.system.eq_rows) + len(controller.system.ineq_rows))
    for sink in net.sink_ids:
        for store in (trace.demands, trace.served, trace.shortfall,
                      trace.sink_pressures, trace.violations_pa):
            store[sink] = []
    for key in plant.cell_order:
        trace.cell_pressures[key] = []
    for src in net.source_ids:
        trace.source_flows.setdefault(src, [])
    for pipe in net.pipes:
        trace.pipe_flows_in[pipe.id] = []
        trace.pipe_flows_out[pipe.id] = []
    for cid in plant.comp_ids:
        trace.powers[cid] = []
        trace.boosts[cid] = []
        trace.comp_flows[cid] = []

    probs = config.tree.probabilities
    for k in range(num_steps):
        phase = controller.phase
        decision = controller.step(x)
        realized = uncertainty.demands_at(net, k, phase)
        x_next, report = plant.step(x, decision.powers, realized, step_index=k)

        trace.steps.append(k)
        trace.phases.append(phase)
        trace.states.append(x.copy())
        for sink in net.sink_ids:
            short = report.shortfall.get(sink, 0.0)
            trace.demands[sink].append(realized[sink])
            trace.served[sink].append(realized[sink] - short)
            trace.shortfall[sink].append(short)
            trace.sink_pressures[sink].append(report.sink_pressures[sink])
            trace.violations_pa[sink].append(
                report.floor_violation_pa.get(sink, 0.0))
        for key in plant.cell_order:
            trace.cell_pressures[key].append(report.cell_pressures[key])
        for src in trace.source_flows:
            trace.source_flows[src].append(report.source_flows.get(src, 0.0))
        for pipe in net.pipes:
            trace.pipe_flows_in[pipe.id].append(report.pipe_flows_in[pipe.id])
            trace.pipe_flows_out[pipe.id].append(report.pipe_flows_out[pipe.id])
        for cid in plant.comp_ids:
            trace.powers[cid].append(decision.powers[cid])
            trace.boosts[cid].append(report.boosts[cid])
            trace.comp_flows[cid].append(report.comp_flows[cid])
        trace.stage_energy_mwh.append(report.stage_energy_mwh)
        if decision.fallback:
            trace.expected_distance.append(float("nan"))
        else:
            trace.expected_distance.append(float(probs @ decision.tracking_values))
        trace.descent_bound.append(decision.stability_rhs)
        trace.stability_slack.append(decision.stability_slack)
        trace.controller_status.append(decision.status)
        trace.controller_iterations.append(decision.iterations)
        trace.solve_seconds.append(decision.solve_seconds)
        trace.fallback.append(decision.fallback)
        trace.plant_mode.append(report.mode)
        trace.plant_newton_iterations.append(report.newton_iterations)
        trace.mass_balance_rel_error.append(report.mass_balance_rel_error)
        x = x_next
    trace.states.append(x.copy())
    return trace
