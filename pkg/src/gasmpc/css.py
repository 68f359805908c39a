"""Optimal cyclic steady state (CSS) of a pipeline network.

The CSS is the energy-minimal time-periodic operating pattern for one demand
cycle: a K-step implicit trajectory whose final state wraps around to its
first step. Its phase-indexed states and compressor powers serve as the
reference orbit for the predictive controllers (terminal conditions and
tracking distances), so repeated retrieval is backed by an on-disk cache
keyed by a content hash of the network, the cycle geometry and the demands.

Phase convention: phase j carries the demand of profile entry j. The state at
phase j is the network state *entering* the step that serves demand j, and
the power at phase j is the compressor operation *during* that step.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretize import Scaling, SystemBuilder, VariableIndex, add_network_period
from .network import NetworkModel, NodeKind
from .nlp import SolveStatus, SolverOptions, solve


@dataclass
class CssSolution:
    """Phase-indexed cyclic steady state with its energy cost."""

    period_steps: int
    dt_seconds: float
    demand_level: str
    objective_mwh: float
    status: str
    iterations: int
    # densities[(pipe_id, cell)][j] = scaled density at phase j
    densities: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    # powers[comp_id][j] = scaled power (MW) applied during phase j
    powers: dict[str, np.ndarray] = field(default_factory=dict)
    # node_pressures[node_id][j] = scaled pressure (bar-sized units) at phase j
    node_pressures: dict[str, np.ndarray] = field(default_factory=dict)
    # slices[(kind, entity, cell)][i] = every solution variable of the cycle
    # slice that serves phase-i demand; lets controllers start at the orbit
    slices: dict[tuple[str, str, int], np.ndarray] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL.value, SolveStatus.ACCEPTABLE.value)

    def density_at(self, pipe_id: str, cell: int, phase: int) -> float:
        return float(self.densities[(pipe_id, cell)][phase % self.period_steps])

    def power_at(self, comp_id: str, phase: int) -> float:
        return float(self.powers[comp_id][phase % self.period_steps])

    def state_vector(self, order: list[tuple[str, int]], phase: int) -> np.ndarray:
        """Densities at one phase, stacked in the given (pipe, cell) order."""
        return np.array([self.density_at(p, c, phase) for p, c in order])

    def slice_value(self, kind: str, entity: str, cell: int, step_phase: int) -> float:
        """Variable value on the cycle slice serving demand of `step_phase`."""
        return float(self.slices[(kind, entity, cell)][step_phase % self.period_steps])

    def to_dict(self) -> dict:
        return {
            "period_steps": self.period_steps,
            "dt_seconds": self.dt_seconds,
            "demand_level": self.demand_level,
            "objective_mwh": self.objective_mwh,
            "status": self.status,
            "iterations": self.iterations,
            "densities": {f"{p}:{c}": [float(v) for v in arr]
                          for (p, c), arr in sorted(self.densities.items())},
            "powers": {cid: [float(v) for v in arr]
                       for cid, arr in sorted(self.powers.items())},
            "node_pressures": {nid: [float(v) for v in arr]
                               for nid, arr in sorted(self.node_pressures.items())},
            "slices": {f"{k}|{e}|{c}": [float(v) for v in arr]
                       for (k, e, c), arr in sorted(self.slices.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CssSolution":
        densities = {}
        for key, arr in d["densities"].items():
            pipe, cell = key.rsplit(":", 1)
            densities[(pipe, int(cell))] = np.asarray(arr, dtype=float)
        slices = {}
        for key, arr in d["slices"].items():
            kind, entity, cell = key.split("|")
            slices[(kind, entity, int(cell))] = np.asarray(arr, dtype=float)
        return cls(
            period_steps=int(d["period_steps"]),
            dt_seconds=float(d["dt_seconds"]),
            demand_level=str(d["demand_level"]),
            objective_mwh=float(d["objective_mwh"]),
            status=str(d["status"]),
            iterations=int(d["iterations"]),
            densities=densities,
            powers={cid: np.asarray(arr, dtype=float) for cid, arr in d["powers"].items()},
            node_pressures={nid: np.asarray(arr, dtype=float)
                            for nid, arr in d["node_pressures"].items()},
            slices=slices,
        )


def demand_table(net: NetworkModel, period_steps: int, level: str = "nominal",
                 overrides: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Per-sink demand arrays over one cycle at the named envelope level."""
    table: dict[str, np.ndarray] = {}
    for sink in net.sink_ids:
        profile = net.demands.get(sink)
        if overrides and sink in overrides:
            vals = np.asarray(overrides[sink], dtype=float)
        elif profile is not None:
            base = profile.level(level)
            vals = np.asarray([base[j % profile.period_steps] for j in range(period_steps)])
        else:
            vals = np.zeros(period_steps)
        if len(vals) != period_steps:
            vals = np.asarray([vals[j % len(vals)] for j in range(period_steps)])
        table[sink] = vals
    return table


def solve_css(
    net: NetworkModel,
    period_steps: int,
    dt_seconds: float,
    *,
    demand_level: str = "nominal",
    demand_overrides: dict[str, np.ndarray] | None = None,
    options: SolverOptions | None = None,
) -> CssSolution:
    """Compute the energy-minimal cyclic steady state for one demand cycle."""
    scaling = Scaling.for_gas(net.gas)
    demands = demand_table(net, period_steps, demand_level, demand_overrides)

    def demand_fn(sink: str, t: int) -> float:
        return float(demands[sink][(t - 1) % period_steps])

    b = SystemBuilder()
    add_network_period(b, net, scaling, period_steps, dt_seconds, demand_values=demand_fn)
    system = b.freeze()
    nlp = system.make_nlp("cyclic_steady_state")
    sol = solve(nlp, options or SolverOptions(max_iter=500))

    K = period_steps
    densities: dict[tuple[str, int], np.ndarray] = {}
    for pipe in net.pipes:
        for cell in range(pipe.num_cells):
            arr = np.empty(K)
            for j in range(K):
                t = K if j == 0 else j
                arr[j] = sol.x[system.column(VariableIndex("density", pipe.id, cell, t, 0))]
            densities[(pipe.id, cell)] = arr
    powers: dict[str, np.ndarray] = {}
    for comp in net.compressors:
        arr = np.empty(K)
        for j in range(K):
            arr[j] = sol.x[system.column(VariableIndex("power", comp.id, -1, j + 1, 0))]
        powers[comp.id] = arr
    node_pressures: dict[str, np.ndarray] = {}
    for node in net.nodes:
        arr = np.empty(K)
        for j in range(K):
            t = K if j == 0 else j
            arr[j] = sol.x[system.column(VariableIndex("node_pressure", node.id, -1, t, 0))]
        node_pressures[node.id] = arr
    slices: dict[tuple[str, str, int], np.ndarray] = {}
    for col, v in enumerate(system.var_list):
        key = (v.kind, v.entity, v.cell)
        if key not in slices:
            slices[key] = np.empty(K)
        slices[key][v.time - 1] = sol.x[col]

    return CssSolution(
        period_steps=K,
        dt_seconds=dt_seconds,
        demand_level=demand_level if demand_overrides is None else "custom",
        objective_mwh=float(sol.objective_value),
        status=sol.status.value,
        iterations=sol.iterations,
        densities=densities,
        powers=powers,
        node_pressures=node_pressures,
        slices=slices,
    )


def _cache_key(net: NetworkModel, period_steps: int, dt_seconds: float, demand_level: str,
               demand_overrides: dict[str, np.ndarray] | None) -> str:
    payload = {
        "network": net.to_canonical_dict(),
        "period_steps": period_steps,
        "dt_seconds": dt_seconds,
        "demand_level": demand_level,
        "overrides": (None if demand_overrides is None else
                      {k: [float(v) for v in arr]
                       for k, arr in sorted(demand_overrides.items())}),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class CssLibrary:
    """Disk-backed store of cyclic-steady-state solutions.

    Files are written atomically (temp file + rename) and keyed by a content
    hash covering the network, cycle geometry and demand specification, so a
    stale entry can never be returned for a modified configuration.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"css-{key[:32]}.json"

    def load(self, net: NetworkModel, period_steps: int, dt_seconds: float,
             demand_level: str = "nominal",
             demand_overrides: dict[str, np.ndarray] | None = None) -> CssSolution | None:
        path = self._path(_cache_key(net, period_steps, dt_seconds, demand_level,
                                     demand_overrides))
        if not path.exists():
            return None
        try:
            return CssSolution.from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, KeyError, ValueError):
            return None  # unreadable cache entries are treated as misses

    def store(self, net: NetworkModel, css: CssSolution,
              demand_overrides: dict[str, np.ndarray] | None = None) -> Path:
        key = _cache_key(net, css.period_steps, css.dt_seconds, css.demand_level,
                         demand_overrides)
        path = self._path(key)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(css.to_dict(), fh, indent=1)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def solve_or_load(self, net: NetworkModel, period_steps: int, dt_seconds: float,
                      *, demand_level: str = "nominal",
                      demand_overrides: dict[str, np.ndarray] | None = None,
                      options: SolverOptions | None = None) -> CssSolution:
        cached = self.load(net, period_steps, dt_seconds, demand_level, demand_overrides)
        if cached is not None and cached.success:
            return cached
        css = solve_css(net, period_steps, dt_seconds, demand_level=demand_level,
                        demand_overrides=demand_overrides, options=options)
        if css.success:
            self.store(net, css, demand_overrides)
        return css
