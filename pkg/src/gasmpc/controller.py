"""Economic predictive controllers for pipeline networks.

Two controllers share one machinery: a nominal controller that optimizes a
single demand forecast, and a multistage controller that optimizes over a
scenario tree of demand envelopes with shared first-stage decisions
(non-anticipativity). Both minimize compressor energy over an N-cycle
prediction horizon, end in the cyclic steady state (state pinned one cycle
before the end, CSS powers pinned over the final cycle), and carry an
auxiliary tracking distance to the CSS orbit whose expected value must shrink
by a fixed fraction step over step — a Lyapunov-style descent condition that
prevents the economic objective from drifting the plant away from the orbit.

Indexing conventions: the controller is invoked at cycle phase k holding the
measured cell densities; prediction step t = 1..N*K serves the demand of
phase (k + t - 1) mod K and applies the power decision of that same phase;
the state reached after step t sits at phase (k + t) mod K.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .css import CssSolution
from .discretize import (
    Horizon, ParamIndex, RowIndex, Scaling, SystemBuilder, VariableIndex,
    add_network_horizon,
)
from .network import NetworkModel, NodeKind
from .nlp import InteriorPointSolver, SolveStatus, SolverOptions

_INACTIVE_RHS = 1e5  # far above any reachable distance, small enough to scale well
_DESCENT_MARGIN = 1e-8  # keeps the descent row feasible within solver tolerance


@dataclass(frozen=True)
class ScenarioTree:
    """Uniform demand-level scenario tree with a finite branching horizon.

    Branching happens on the first `robust_horizon` steps; afterwards each
    scenario keeps its last-drawn level. Scenario s is encoded in base
    len(levels), most significant digit = step 1. Controls at step t are
    shared among scenarios agreeing on all levels revealed before t.
    """

    levels: tuple[str, ...]
    robust_horizon: int = 1

    def __post_init__(self):
        if not self.levels:
            raise ValueError("scenario tree needs at least one demand level")
        if self.robust_horizon < 1:
            raise ValueError("robust horizon must be at least 1")
        if self.num_scenarios > 256:
            raise ValueError(
                f"{self.num_scenarios} scenarios exceed the supported limit of 256; "
                "reduce the robust horizon or the number of demand levels")

    @property
    def num_scenarios(self) -> int:
        return len(self.levels) ** self.robust_horizon

    @property
    def probabilities(self) -> np.ndarray:
        return np.full(self.num_scenarios, 1.0 / self.num_scenarios)

    def digits(self, scenario: int) -> tuple[int, ...]:
        base = len(self.levels)
        out = []
        for pos in range(self.robust_horizon - 1, -1, -1):
            out.append((scenario // base ** pos) % base)
        return tuple(out)

    def level_at(self, scenario: int, step: int) -> str:
        """Demand level drawn by `scenario` during prediction step `step` (1-based)."""
        d = self.digits(scenario)
        idx = min(step, self.robust_horizon) - 1
        return self.levels[d[idx]]

    def tail_level(self, scenario: int) -> str:
        return self.levels[self.digits(scenario)[-1]]

    def control_group(self, scenario: int, step: int) -> int:
        """Representative scenario whose step-`step` controls this one reuses."""
        known = min(max(step - 1, 0), self.robust_horizon)
        base = len(self.levels)
        d = self.digits(scenario)
        rep = 0
        for pos in range(self.robust_horizon):
            digit = d[pos] if pos < known else 0
            rep = rep * base + digit
        return rep


@dataclass
class ControllerConfig:
    """Settings shared by the nominal and multistage controllers."""

    prediction_periods: int = 3      # cycles in the prediction horizon
    period_steps: int = 24           # steps per demand cycle
    dt_seconds: float = 3600.0
    scenario_levels: tuple[str, ...] = ("nominal",)
    robust_horizon: int = 1
    descent_fraction: float = 0.1    # required fractional decrease of the tracking value
    stability_slack: bool = False    # soften the descent row with a penalized slack
    slack_weight: float = 1e3
    elastic_sink_pressure: bool = False  # soften sink pressure floors (penalized)
    elastic_weight: float = 1e4
    reevaluate_previous_value: bool = False  # recompute V_{k-1} instead of reusing the optimum
    # Controller solves always start from a near-feasible guess (warm shift or
    # steady-orbit fill), so the interior projection uses small pushes that
    # barely perturb the constraint manifold, and the barrier starts small so
    # bound-riding variables (idle compressors, floor-hugging pressures) are
    # not dragged far off their active bounds before being pulled back.
    solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(
            max_iter=500, bound_push=1e-4, bound_frac=1e-4, mu_init=1e-4
        )
    )

    @property
    def horizon_steps(self) -> int:
        return self.prediction_periods * self.period_steps

    @property
    def tree(self) -> ScenarioTree:
        return ScenarioTree(tuple(self.scenario_levels), self.robust_horizon)

    @property
    def is_multistage(self) -> bool:
        return self.tree.num_scenarios > 1


@dataclass
class ControlDecision:
    """Outcome of one controller invocation."""

    powers: dict[str, float]          # scaled (MW) applied compressor powers
    status: str
    nlp_objective: float              # expected energy (MWh) plus any penalty terms
    iterations: int
    solve_seconds: float
    tracking_values: np.ndarray       # optimal auxiliary distance, per scenario
    stability_rhs: float              # bound imposed on the expected distance
    stability_slack: float            # slack used by the descent row (0 when hard)
    fallback: bool                    # True when CSS feedforward replaced a failed solve
    predicted_densities: np.ndarray   # scenario-0 state after the first step

    @property
    def success(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL.value, SolveStatus.ACCEPTABLE.value)


class EnmpcController:
    """Receding-horizon economic controller around a CSS reference orbit.

    `css_by_level` must hold one CSS per demand level named in the scenario
    tree (the nominal controller needs only its forecast level). The
    controller's NLP is built once; each invocation only rewrites parameter
    values (measured state, rotated demands and references, descent bound),
    shifts the previous solution as a warm start and re-solves.
    """

    def __init__(self, net: NetworkModel, config: ControllerConfig,
                 css_by_level: dict[str, CssSolution], *, start_phase: int = 0):
        self.net = net
        self.config = config
        self.tree = config.tree
        self.scaling = Scaling.for_gas(net.gas)
        for level in set(config.scenario_levels):
            if level not in css_by_level:
                raise ValueError(f"missing CSS for demand level {level!r}")
            if css_by_level[level].period_steps != config.period_steps:
                raise ValueError(f"CSS for level {level!r} has the wrong cycle length")
        self.css_by_level = css_by_level
        self.cell_order: list[tuple[str, int]] = [
            (p.id, c) for p in net.pipes for c in range(p.num_cells)]
        self.comp_ids = [c.id for c in net.compressors]
        self._phase = start_phase % config.period_steps
        self._k = 0
        self._v_prev: np.ndarray | None = None      # optimal distance per scenario
        self._ltr_prev: np.ndarray | None = None    # realized stage distance per scenario
        self._x_warm: np.ndarray | None = None
        self._build()

    # -- construction --------------------------------------------------------

    def _tracking_weights(self) -> tuple[float, float]:
        lows = [n.pressure_min for n in self.net.nodes]
        highs = [n.pressure_max for n in self.net.nodes]
        p_range = (max(highs) - min(lows)) / self.scaling.pressure
        p_caps = [c.power_max or 10e6 for c in self.net.compressors]
        w_state = 1.0 / p_range ** 2
        w_power = 1.0 / (max(p_caps) / self.scaling.power) ** 2
        return w_state, w_power

    def _build(self) -> None:
        cfg = self.config
        tree = self.tree
        S = tree.num_scenarios
        T = cfg.horizon_steps
        K = cfg.period_steps
        prob = tree.probabilities
        b = SystemBuilder()
        horizon = Horizon(T, cfg.dt_seconds)
        power_cols: dict[tuple[str, int, int], int] = {}
        handles_by_scenario = []

        for s in range(S):
            def shared_power(comp_id: str, t: int, _s=s) -> int | None:
                rep = tree.control_group(_s, t)
                if rep == _s:
                    return None
                return power_cols[(comp_id, t, rep)]

            h = add_network_horizon(
                b, self.net, self.scaling, horizon,
                scenario=s,
                demand_values=lambda sink, t, _s=s: self._demand_value(_s, sink, t, phase=0),
                shared_power_column=shared_power,
                relax_sink_pressure_floor=cfg.elastic_sink_pressure,
                energy_weight=float(prob[s]),
            )
            handles_by_scenario.append(h)
            for t in range(1, T + 1):
                for cid in self.comp_ids:
                    power_cols[(cid, t, s)] = h.step(t, s).power[cid]

        w_state, w_power = self._tracking_weights()
        self._w_state, self._w_power = w_state, w_power
        term_t = (cfg.prediction_periods - 1) * K

        for s in range(S):
            h = handles_by_scenario[s]
            # auxiliary tracking distance and its defining row
            v_col = b.new_var(VariableIndex("lyapunov", "", -1, 0, s), -np.inf, np.inf, 0.0)
            row = b.new_row(RowIndex("lyapunov_def", "", -1, 0, s))
            b.linear(row, v_col, 1.0)
            state0 = b.new_param(ParamIndex("initial_tracking", "", -1, 0, s), 0.0)
            b.param_term(row, state0, -1.0)
            for t in range(1, T):
                for (pid, cell) in self.cell_order:
                    ref = b.new_param(ParamIndex("track_pressure_ref", pid, cell, t, s), 0.0)
                    b.sqdev(row, -w_state, h.step(t, s).density[(pid, cell)], ref)
            for t in range(1, T + 1):
                for cid in self.comp_ids:
                    # shared columns still enter every scenario's distance,
                    # each against that scenario's own reference orbit
                    ref = b.new_param(ParamIndex("track_power_ref", cid, -1, t, s), 0.0)
                    b.sqdev(row, -w_power, power_cols[(cid, t, s)], ref)
            # terminal conditions: state on the orbit one cycle before the end,
            # CSS powers over the final cycle
            for (pid, cell) in self.cell_order:
                ref = b.new_param(ParamIndex("terminal_pressure_ref", pid, cell, term_t, s), 0.0)
                trow = b.new_row(RowIndex("terminal_pressure", pid, cell, term_t, s))
                b.linear(trow, h.step(term_t, s).density[(pid, cell)], 1.0)
                b.param_term(trow, ref, -1.0)
            for t in range(term_t + 1, T + 1):
                for cid in self.comp_ids:
                    ref = b.new_param(ParamIndex("terminal_power_ref", cid, -1, t, s), 0.0)
                    trow = b.new_row(RowIndex("terminal_power", cid, -1, t, s))
                    b.linear(trow, power_cols[(cid, t, s)], 1.0)
                    b.param_term(trow, ref, -1.0)

        # expected-distance descent row
        rhs = b.new_param(ParamIndex("stability_rhs", "", -1, 0, 0), _INACTIVE_RHS)
        srow = b.new_row(RowIndex("stability", "", -1, 0, 0), equality=False)
        for s in range(S):
            b.linear(srow, b.var(VariableIndex("lyapunov", "", -1, 0, s)), float(prob[s]))
        b.param_term(srow, rhs, -1.0)
        if cfg.stability_slack or cfg.is_multistage:
            xi = b.new_var(VariableIndex("stability_slack", "", -1, 0, 0), 0.0, np.inf, 0.0)
            b.linear(srow, xi, -1.0)
            b.objective_linear(xi, cfg.slack_weight)
            self._has_slack = True
        else:
            self._has_slack = False

        # optional elastic sink pressure floors
        if cfg.elastic_sink_pressure:
            for s in range(S):
                h = handles_by_scenario[s]
                for t in range(1, T + 1):
                    for sink in self.net.sink_ids:
                        node = self.net.node(sink)
                        sig = b.new_var(VariableIndex("elastic", sink, -1, t, s),
                                        0.0, np.inf, 0.0)
                        erow = b.new_row(RowIndex("elastic_pressure", sink, -1, t, s),
                                         equality=False)
                        b.const_term(erow, node.pressure_min / self.scaling.pressure)
                        b.linear(erow, h.step(t, s).node_pressure[sink], -1.0)
                        b.linear(erow, sig, -1.0)
                        b.objective_linear(sig, float(prob[s]) * cfg.elastic_weight)

        # Past the pinned state, the final cycle has zero degrees of freedom:
        # pinned powers plus the pinned starting state force the trajectory
        # onto the (feasible) steady orbit through the equality rows alone.
        # Bounds there are therefore redundant, and keeping them is actively
        # harmful: the orbit rides sink pressure floors and idle-compressor
        # ratio floors exactly, so an equality-pinned variable would sit ON
        # its bound and the log-barrier subproblem would lose its interior.
        # The same applies to pressures at the pinned time itself, which are
        # direct equation-of-state images of the pinned densities.
        sink_ids = set(self.net.sink_ids)
        for col, v in enumerate(b.variables):
            if v.kind in ("lyapunov", "stability_slack", "elastic"):
                continue
            determined = v.time > term_t or (
                v.time == term_t
                and (v.kind == "cell_pressure"
                     or (v.kind == "node_pressure" and v.entity in sink_ids))
            )
            if determined:
                b.set_bounds(col, -np.inf, np.inf)

        self.system = b.freeze()
        self.nlp = self.system.make_nlp("predictive_controller")
        self.handles = handles_by_scenario
        self._power_cols = power_cols
        self._build_shift_map()

    def _build_shift_map(self) -> None:
        """Map each column to its one-step-later counterpart for warm starts."""
        T = self.config.horizon_steps
        index_of = {v: i for i, v in enumerate(self.system.var_list)}
        shift = np.arange(self.system.num_vars)
        for i, v in enumerate(self.system.var_list):
            if 1 <= v.time < T:
                succ = VariableIndex(v.kind, v.entity, v.cell, v.time + 1, v.scenario)
                j = index_of.get(succ)
                if j is not None:
                    shift[i] = j
        self._shift_map = shift

    # -- parameter plumbing ---------------------------------------------------

    def _demand_value(self, scenario: int, sink: str, t: int, phase: int) -> float:
        level = self.tree.level_at(scenario, t)
        profile = self.net.demands.get(sink)
        if profile is None:
            return 0.0
        vals = profile.level(level)
        return float(vals[(phase + t - 1) % profile.period_steps])

    def _css(self, scenario: int) -> CssSolution:
        return self.css_by_level[self.tree.tail_level(scenario)]

    def _stage_distance(self, densities: np.ndarray, powers: dict[str, float],
                        scenario: int, phase: int) -> float:
        """Tracking distance of one realized (state, control) pair to the orbit."""
        css = self._css(scenario)
        val = 0.0
        for i, (pid, cell) in enumerate(self.cell_order):
            dev = densities[i] - css.density_at(pid, cell, phase)
            val += self._w_state * dev * dev
        for cid in self.comp_ids:
            dev = powers[cid] - css.power_at(cid, phase)
            val += self._w_power * dev * dev
        return val

    def _set_parameters(self, x_k: np.ndarray, phase: int, rhs_value: float) -> None:
        cfg = self.config
        sysm = self.system
        T = cfg.horizon_steps
        K = cfg.period_steps
        term_t = (cfg.prediction_periods - 1) * K
        for i, (pid, cell) in enumerate(self.cell_order):
            sysm.set_param(ParamIndex("initial_density", pid, cell, 0, 0), float(x_k[i]))
        for s in range(self.tree.num_scenarios):
            css = self._css(s)
            for t in range(1, T + 1):
                for sink in self.net.sink_ids:
                    sysm.set_param(ParamIndex("demand", sink, -1, t, s),
                                   self._demand_value(s, sink, t, phase)
                                   / self.scaling.mass_flow)
            for t in range(1, T):
                for (pid, cell) in self.cell_order:
                    sysm.set_param(ParamIndex("track_pressure_ref", pid, cell, t, s),
                                   css.density_at(pid, cell, phase + t))
            for t in range(1, T + 1):
                for cid in self.comp_ids:
                    sysm.set_param(ParamIndex("track_power_ref", cid, -1, t, s),
                                   css.power_at(cid, phase + t - 1))
            # state half of the first stage distance; the power half involves
            # the current decision variables and lives in the quadratic terms
            sysm.set_param(ParamIndex("initial_tracking", "", -1, 0, s),
                           self._state_only_distance(x_k, s, phase))
            for (pid, cell) in self.cell_order:
                sysm.set_param(ParamIndex("terminal_pressure_ref", pid, cell, term_t, s),
                               css.density_at(pid, cell, phase))
            for t in range(term_t + 1, T + 1):
                for cid in self.comp_ids:
                    sysm.set_param(ParamIndex("terminal_power_ref", cid, -1, t, s),
                                   css.power_at(cid, phase + t - 1))
        sysm.set_param(ParamIndex("stability_rhs", "", -1, 0, 0), rhs_value)

    def _state_only_distance(self, densities: np.ndarray, scenario: int, phase: int) -> float:
        css = self._css(scenario)
        val = 0.0
        for i, (pid, cell) in enumerate(self.cell_order):
            dev = densities[i] - css.density_at(pid, cell, phase)
            val += self._w_state * dev * dev
        return val

    def _evaluate_tracking(self, xs: np.ndarray, x_k: np.ndarray,
                           scenario: int, phase: int) -> float:
        """Recompute one scenario's horizon tracking distance from a solution vector."""
        cfg = self.config
        css = self._css(scenario)
        val = self._state_only_distance(x_k, scenario, phase)
        for t in range(1, cfg.horizon_steps):
            for i, (pid, cell) in enumerate(self.cell_order):
                col = self.system.column(VariableIndex("density", pid, cell, t, scenario))
                dev = xs[col] - css.density_at(pid, cell, phase + t)
                val += self._w_state * dev * dev
        for t in range(1, cfg.horizon_steps + 1):
            for cid in self.comp_ids:
                dev = xs[self._power_cols[(cid, t, scenario)]] \
                    - css.power_at(cid, phase + t - 1)
                val += self._w_power * dev * dev
        return val

    # -- stepping -------------------------------------------------------------

    def reset(self, start_phase: int = 0) -> None:
        self._phase = start_phase % self.config.period_steps
        self._k = 0
        self._v_prev = None
        self._ltr_prev = None
        self._x_warm = None

    @property
    def phase(self) -> int:
        return self._phase

    def stability_bound(self) -> float:
        """Descent bound for the upcoming solve (inactive on the first step).

        The realized stage distance is one of the nonnegative summands of the
        previous optimal distance, so the exact bound is never negative; the
        clamp and margin only absorb solver-tolerance noise when the loop sits
        right on the orbit.
        """
        if self._v_prev is None or self._ltr_prev is None:
            return _INACTIVE_RHS
        prob = self.tree.probabilities
        raw = float(prob @ (self._v_prev - self.config.descent_fraction * self._ltr_prev))
        return max(raw, 0.0) + _DESCENT_MARGIN

    def _css_feedforward(self, phase: int) -> dict[str, float]:
        css = self.css_by_level.get("nominal") or self._css(0)
        return {cid: css.power_at(cid, phase) for cid in self.comp_ids}

    def _orbit_guess(self, x_k: np.ndarray, phase: int) -> np.ndarray:
        """Initial point on the phase-rotated reference orbit.

        The orbit nearly satisfies all dynamic rows and the terminal pins
        exactly, so only the decaying mismatch at the measured state remains —
        without this, cold solves start far off the terminal manifold and the
        first Newton directions become uselessly large.
        """
        K = self.config.period_steps
        x = self.system.start.copy()
        for col, v in enumerate(self.system.var_list):
            if v.kind in ("stability_slack", "elastic"):
                x[col] = 0.0
            elif v.kind != "lyapunov":
                css = self._css(v.scenario)
                if (v.kind, v.entity, v.cell) in css.slices:
                    x[col] = css.slice_value(v.kind, v.entity, v.cell,
                                             phase + v.time - 1)
        for s in range(self.tree.num_scenarios):
            col = self.system.column(VariableIndex("lyapunov", "", -1, 0, s))
            x[col] = self._evaluate_tracking(x, x_k, s, phase)
        return x

    def step(self, x_k: np.ndarray) -> ControlDecision:
        """Solve the horizon problem at the measured state and return the decision."""
        cfg = self.config
        phase = self._phase
        x_k = np.asarray(x_k, dtype=float)
        rhs_value = self.stability_bound()
        self._set_parameters(x_k, phase, rhs_value)

        t0 = time.perf_counter()
        if self._x_warm is not None:
            sol = InteriorPointSolver(self.nlp, cfg.solver).solve(
                x0=self._x_warm[self._shift_map])
            if not sol.success:
                sol = InteriorPointSolver(self.nlp, cfg.solver).solve(
                    x0=self._orbit_guess(x_k, phase))
        else:
            sol = InteriorPointSolver(self.nlp, cfg.solver).solve(
                x0=self._orbit_guess(x_k, phase))
        elapsed = time.perf_counter() - t0

        S = self.tree.num_scenarios
        if sol.success:
            xs = sol.x
            powers = {cid: float(xs[self._power_cols[(cid, 1, 0)]]) for cid in self.comp_ids}
            v_vals = np.array([
                xs[self.system.column(VariableIndex("lyapunov", "", -1, 0, s))]
                for s in range(S)])
            slack = 0.0
            if self._has_slack:
                slack = float(xs[self.system.column(
                    VariableIndex("stability_slack", "", -1, 0, 0))])
            predicted = np.array([
                xs[self.system.column(VariableIndex("density", pid, cell, 1, 0))]
                for (pid, cell) in self.cell_order])
            self._x_warm = xs.copy()
            fallback = False
        else:
            powers = self._css_feedforward(phase)
            v_vals = np.full(S, np.nan)
            slack = 0.0
            predicted = x_k.copy()
            self._x_warm = None
            fallback = True

        # bookkeeping for the next descent bound
        if fallback:
            self._v_prev = None
            self._ltr_prev = None
        else:
            if cfg.reevaluate_previous_value:
                self._v_prev = np.array([
                    self._evaluate_tracking(xs, x_k, s, phase) for s in range(S)])
            else:
                self._v_prev = v_vals.copy()
            self._ltr_prev = np.array([
                self._stage_distance(x_k, powers, s, phase) for s in range(S)])

        self._phase = (phase + 1) % cfg.period_steps
        self._k += 1
        return ControlDecision(
            powers=powers,
            status=sol.status.value if not fallback else "fallback",
            nlp_objective=float(sol.objective_value) if not fallback else float("nan"),
            iterations=sol.iterations,
            solve_seconds=elapsed,
            tracking_values=v_vals,
            stability_rhs=rhs_value,
            stability_slack=slack,
            fallback=fallback,
            predicted_densities=predicted,
        )
