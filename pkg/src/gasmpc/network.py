"""Gas network data model: components, physical relations, validation, JSON ingestion.

All quantities are strict SI internally (Pa, kg/s, m, W, s). The JSON config
format uses unit-suffixed keys (``pressure_min_bar``, ``power_max_MW``) that are
converted once at ingestion.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BAR = 1.0e5  # Pa
MW = 1.0e6   # W


class ConfigError(Exception):
    """Malformed or inconsistent configuration input."""


class NodeKind(enum.Enum):
    SOURCE_FIXED_PRESSURE = "source_fixed_pressure"
    SOURCE_FIXED_FLOW = "source_fixed_flow"
    SINK = "sink"
    JUNCTION = "junction"


@dataclass(frozen=True)
class GasProperties:
    """Isothermal gas description shared by the whole network."""

    temperature: float          # K
    molecular_weight: float     # kg/mol
    compressibility: float      # Z, dimensionless
    specific_heat: float        # c_p, J/(kg K)
    heat_capacity_ratio: float  # gamma, dimensionless
    gas_constant: float = 8.314  # R, J/(mol K)

    @property
    def sound_speed_sq(self) -> float:
        """Z*R*T/MW, the constant linking pressure to density (m^2/s^2)."""
        return self.compressibility * self.gas_constant * self.temperature / self.molecular_weight


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    pressure_min: float  # Pa
    pressure_max: float  # Pa
    fixed_pressure: float | None = None  # Pa, SOURCE_FIXED_PRESSURE only
    fixed_flow: float | None = None      # kg/s, SOURCE_FIXED_FLOW only


@dataclass(frozen=True)
class PipeSpec:
    id: str
    from_node: str
    to_node: str
    length: float     # m
    diameter: float   # m
    friction: float   # Darcy-type factor c_f, dimensionless
    num_cells: int = 3

    @property
    def area(self) -> float:
        return math.pi * self.diameter ** 2 / 4.0

    @property
    def cell_length(self) -> float:
        return self.length / self.num_cells


@dataclass(frozen=True)
class CompressorSpec:
    id: str
    from_node: str
    to_node: str
    efficiency: float
    beta_min: float = 1.0
    beta_max: float = 2.0
    power_max: float | None = None  # W, None = unbounded


@dataclass(frozen=True)
class DemandProfile:
    """One cyclic demand period for a sink: nominal values plus an uncertainty envelope.

    ``values[j]`` is the draw rate (kg/s) during cycle phase j; the envelope
    bounds every admissible realization at that phase.
    """

    period_steps: int
    values: np.ndarray
    envelope_min: np.ndarray
    envelope_max: np.ndarray

    def level(self, which: str) -> np.ndarray:
        """Return the named envelope level: 'nominal', 'min' or 'max'."""
        if which == "nominal":
            return self.values
        if which == "min":
            return self.envelope_min
        if which == "max":
            return self.envelope_max
        raise KeyError(f"unknown demand level {which!r}")


@dataclass
class NetworkModel:
    gas: GasProperties
    nodes: list[NodeSpec]
    pipes: list[PipeSpec]
    compressors: list[CompressorSpec]
    demands: dict[str, DemandProfile] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._node_by_id = {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> NodeSpec:
        return self._node_by_id[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_by_id

    @property
    def sink_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind is NodeKind.SINK]

    @property
    def source_ids(self) -> list[str]:
        return [n.id for n in self.nodes
                if n.kind in (NodeKind.SOURCE_FIXED_PRESSURE, NodeKind.SOURCE_FIXED_FLOW)]

    def to_canonical_dict(self) -> dict:
        """SI-unit dict with deterministic ordering, used for hashing and caching."""
        return {
            "gas": {
                "temperature": self.gas.temperature,
                "molecular_weight": self.gas.molecular_weight,
                "compressibility": self.gas.compressibility,
                "specific_heat": self.gas.specific_heat,
                "heat_capacity_ratio": self.gas.heat_capacity_ratio,
                "gas_constant": self.gas.gas_constant,
            },
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "pressure_min": n.pressure_min,
                    "pressure_max": n.pressure_max,
                    "fixed_pressure": n.fixed_pressure,
                    "fixed_flow": n.fixed_flow,
                }
                for n in self.nodes
            ],
            "pipes": [
                {
                    "id": p.id,
                    "from": p.from_node,
                    "to": p.to_node,
                    "length": p.length,
                    "diameter": p.diameter,
                    "friction": p.friction,
                    "num_cells": p.num_cells,
                }
                for p in self.pipes
            ],
            "compressors": [
                {
                    "id": c.id,
                    "from": c.from_node,
                    "to": c.to_node,
                    "efficiency": c.efficiency,
                    "beta_min": c.beta_min,
                    "beta_max": c.beta_max,
                    "power_max": c.power_max,
                }
                for c in self.compressors
            ],
            "demands": {
                node_id: {
                    "period_steps": d.period_steps,
                    "values": [float(v) for v in d.values],
                    "envelope_min": [float(v) for v in d.envelope_min],
                    "envelope_max": [float(v) for v in d.envelope_max],
                }
                for node_id, d in sorted(self.demands.items())
            },
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# physical relations


def equation_of_state(gas: GasProperties, rho):
    """Pressure from density: p = Z * rho * (R/MW) * T.

    Accepts scalars or arrays; densities must be strictly positive.
    """
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr <= 0.0):
        raise ValueError("density must be strictly positive")
    p = gas.sound_speed_sq * rho_arr
    return float(p) if np.isscalar(rho) else p


def density_from_pressure(gas: GasProperties, p):
    """Inverse of :func:`equation_of_state`."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0):
        raise ValueError("pressure must be strictly positive")
    rho = p_arr / gas.sound_speed_sq
    return float(rho) if np.isscalar(p) else rho


def compressor_power(gas: GasProperties, mass_flow, beta, efficiency: float = 1.0):
    """Shaft power of an adiabatic compressor stage.

    P = (1/eta) * f * c_p * T_in * (beta**(1 - 1/gamma) - 1), with mass flow f
    in kg/s and boost ratio beta = p_out/p_in >= 1.
    """
    f_arr = np.asarray(mass_flow, dtype=float)
    b_arr = np.asarray(beta, dtype=float)
    if np.any(f_arr < 0.0):
        raise ValueError("compressor mass flow must be nonnegative")
    if np.any(b_arr < 1.0):
        raise ValueError("boost ratio must be >= 1")
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    kappa = 1.0 - 1.0 / gas.heat_capacity_ratio
    p = (f_arr * gas.specific_heat * gas.temperature / efficiency) * (b_arr ** kappa - 1.0)
    if np.isscalar(mass_flow) and np.isscalar(beta):
        return float(p)
    return p


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, subject: str, message: str) -> None:
        self.violations.append(Violation(code, subject, message))

    def __str__(self) -> str:
        if self.ok:
            return "network valid"
        return "\n".join(f"[{v.code}] {v.subject}: {v.message}" for v in self.violations)


def validate_network(net: NetworkModel) -> ValidationReport:
    """Structural and physical sanity checks. Returns a report, never raises."""
    rep = ValidationReport()
    g = net.gas
    if g.temperature <= 0:
        rep.add("gas.temperature", "gas", "temperature must be positive")
    if g.molecular_weight <= 0:
        rep.add("gas.molecular_weight", "gas", "molecular weight must be positive")
    if g.compressibility <= 0:
        rep.add("gas.compressibility", "gas", "compressibility must be positive")
    if g.specific_heat <= 0:
        rep.add("gas.specific_heat", "gas", "specific heat must be positive")
    if g.heat_capacity_ratio <= 1.0:
        rep.add("gas.heat_capacity_ratio", "gas", "heat capacity ratio must exceed 1")

    seen_nodes: set[str] = set()
    for n in net.nodes:
        if not n.id:
            rep.add("node.id", repr(n.id), "node id must be nonempty")
        if n.id in seen_nodes:
            rep.add("node.duplicate", n.id, "duplicate node id")
        seen_nodes.add(n.id)
        if not (0.0 <= n.pressure_min < n.pressure_max):
            rep.add("node.pressure_bounds", n.id, "require 0 <= pressure_min < pressure_max")
        if n.fixed_pressure is not None and n.fixed_flow is not None:
            rep.add("node.overspecified", n.id, "node fixes both pressure and flow")
        if n.kind is NodeKind.SOURCE_FIXED_PRESSURE:
            if n.fixed_pressure is None:
                rep.add("node.missing_pressure", n.id, "fixed-pressure source needs fixed_pressure")
            elif not (n.pressure_min <= n.fixed_pressure <= n.pressure_max):
                rep.add("node.pressure_outside_bounds", n.id, "fixed pressure outside its own bounds")
        elif n.fixed_pressure is not None:
            rep.add("node.stray_pressure", n.id, "fixed_pressure on a non-pressure-source node")
        if n.kind is NodeKind.SOURCE_FIXED_FLOW:
            if n.fixed_flow is None:
                rep.add("node.missing_flow", n.id, "fixed-flow source needs fixed_flow")
        elif n.fixed_flow is not None:
            rep.add("node.stray_flow", n.id, "fixed_flow on a non-flow-source node")

    if not any(n.kind is NodeKind.SOURCE_FIXED_PRESSURE for n in net.nodes):
        rep.add("network.no_pressure_reference", "network",
                "at least one fixed-pressure source is required to pin the pressure level")

    seen_edges: set[str] = set()
    for p in net.pipes:
        if p.id in seen_edges:
            rep.add("edge.duplicate", p.id, "duplicate edge id")
        seen_edges.add(p.id)
        for end in (p.from_node, p.to_node):
            if end not in seen_nodes:
                rep.add("pipe.endpoint", p.id, f"unknown endpoint {end!r}")
        if p.from_node == p.to_node:
            rep.add("pipe.self_loop", p.id, "pipe connects a node to itself")
        if p.length <= 0 or p.diameter <= 0:
            rep.add("pipe.geometry", p.id, "length and diameter must be positive")
        if p.friction <= 0:
            rep.add("pipe.friction", p.id, "friction factor must be positive")
        if p.num_cells < 1:
            rep.add("pipe.cells", p.id, "num_cells must be >= 1")

    for c in net.compressors:
        if c.id in seen_edges:
            rep.add("edge.duplicate", c.id, "duplicate edge id")
        seen_edges.add(c.id)
        for end in (c.from_node, c.to_node):
            if end not in seen_nodes:
                rep.add("compressor.endpoint", c.id, f"unknown endpoint {end!r}")
        if c.from_node == c.to_node:
            rep.add("compressor.self_loop", c.id, "compressor connects a node to itself")
        if not 0.0 < c.efficiency <= 1.0:
            rep.add("compressor.efficiency", c.id, "efficiency must lie in (0, 1]")
        if not 1.0 <= c.beta_min < c.beta_max:
            rep.add("compressor.beta_bounds", c.id, "require 1 <= beta_min < beta_max")
        if c.power_max is not None and c.power_max <= 0:
            rep.add("compressor.power_max", c.id, "power_max must be positive when given")

    sink_set = {n.id for n in net.nodes if n.kind is NodeKind.SINK}
    for node_id, prof in net.demands.items():
        if node_id not in seen_nodes:
            rep.add("demand.unknown_node", node_id, "demand attached to unknown node")
        elif node_id not in sink_set:
            rep.add("demand.not_sink", node_id, "demand profiles belong on sinks only")
        if prof.period_steps < 1:
            rep.add("demand.period", node_id, "period must be >= 1 step")
        for name, arr in (("values", prof.values),
                          ("envelope_min", prof.envelope_min),
                          ("envelope_max", prof.envelope_max)):
            if len(arr) != prof.period_steps:
                rep.add("demand.length", node_id, f"{name} length != period_steps")
        if (len(prof.values) == len(prof.envelope_min) == len(prof.envelope_max)
                == prof.period_steps):
            if np.any(prof.envelope_min < 0):
                rep.add("demand.negative", node_id, "envelope_min must be nonnegative")
            if np.any(prof.envelope_min > prof.values) or np.any(prof.values > prof.envelope_max):
                rep.add("demand.envelope_order", node_id,
                        "require envelope_min <= values <= envelope_max elementwise")
    for node_id in sorted(sink_set - set(net.demands)):
        rep.add("demand.missing", node_id, "sink has no demand profile")

    # connectivity over the undirected union of pipes and compressors
    if net.nodes and not rep.violations:
        adj: dict[str, set[str]] = {n.id: set() for n in net.nodes}
        for e in (*net.pipes, *net.compressors):
            adj[e.from_node].add(e.to_node)
            adj[e.to_node].add(e.from_node)
        stack = [net.nodes[0].id]
        reached: set[str] = set()
        while stack:
            v = stack.pop()
            if v in reached:
                continue
            reached.add(v)
            stack.extend(adj[v] - reached)
        missing = sorted(seen_nodes - reached)
        if missing:
            rep.add("network.disconnected", ",".join(missing),
                    "nodes unreachable from the rest of the network")
    return rep


# ---------------------------------------------------------------------------
# JSON ingestion


def _require(mapping: dict, key: str, ctx: str):
    if key not in mapping:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return mapping[key]


def _demand_profile_from_config(cfg: dict, node_id: str) -> DemandProfile:
    kind = cfg.get("kind", "explicit")
    ctx = f"demands[{node_id}]"
    if kind == "sinusoid":
        period = int(_require(cfg, "period_steps", ctx))
        mean = float(_require(cfg, "mean_kg_per_s", ctx))
        amp = float(cfg.get("amplitude_frac", 0.0))
        peak = float(cfg.get("peak_step", 0.0))
        env = float(cfg.get("envelope_frac", 0.0))
        phases = np.arange(period)
        values = mean * (1.0 + amp * np.cos(2.0 * np.pi * (phases - peak) / period))
        if np.any(values < 0):
            raise ConfigError(f"{ctx}: sinusoid dips below zero demand")
        return DemandProfile(
            period_steps=period,
            values=values,
            envelope_min=values * (1.0 - env),
            envelope_max=values * (1.0 + env),
        )
    if kind == "explicit":
        values = np.asarray(_require(cfg, "values_kg_per_s", ctx), dtype=float)
        period = int(cfg.get("period_steps", len(values)))
        emin = np.asarray(cfg.get("envelope_min_kg_per_s", values), dtype=float)
        emax = np.asarray(cfg.get("envelope_max_kg_per_s", values), dtype=float)
        return DemandProfile(period_steps=period, values=values,
                             envelope_min=emin, envelope_max=emax)
    raise ConfigError(f"{ctx}: unknown demand kind {kind!r}")


def network_from_dict(cfg: dict) -> NetworkModel:
    """Build a NetworkModel from the JSON config structure (unit-suffixed keys)."""
    try:
        gas_cfg = _require(cfg, "gas", "network")
        gas = GasProperties(
            temperature=float(_require(gas_cfg, "temperature_K", "gas")),
            molecular_weight=float(_require(gas_cfg, "molecular_weight_kg_per_mol", "gas")),
            compressibility=float(_require(gas_cfg, "compressibility", "gas")),
            specific_heat=float(_require(gas_cfg, "specific_heat_J_per_kgK", "gas")),
            heat_capacity_ratio=float(_require(gas_cfg, "heat_capacity_ratio", "gas")),
            gas_constant=float(gas_cfg.get("gas_constant_J_per_molK", 8.314)),
        )
        nodes = []
        for nc in _require(cfg, "nodes", "network"):
            node_id = str(_require(nc, "id", "node"))
            kind_raw = _require(nc, "kind", f"node {node_id}")
            try:
                kind = NodeKind(kind_raw)
            except ValueError as exc:
                raise ConfigError(f"node {node_id}: unknown kind {kind_raw!r}") from exc
            fixed_p = nc.get("fixed_pressure_bar")
            fixed_f = nc.get("fixed_flow_kg_per_s")
            nodes.append(NodeSpec(
                id=node_id,
                kind=kind,
                pressure_min=float(_require(nc, "pressure_min_bar", f"node {node_id}")) * BAR,
                pressure_max=float(_require(nc, "pressure_max_bar", f"node {node_id}")) * BAR,
                fixed_pressure=None if fixed_p is None else float(fixed_p) * BAR,
                fixed_flow=None if fixed_f is None else float(fixed_f),
            ))
        default_cells = int(cfg.get("num_cells_default", 3))
        pipes = []
        for pc in cfg.get("pipes", []):
            pipe_id = str(_require(pc, "id", "pipe"))
            pipes.append(PipeSpec(
                id=pipe_id,
                from_node=str(_require(pc, "from", f"pipe {pipe_id}")),
                to_node=str(_require(pc, "to", f"pipe {pipe_id}")),
                length=float(_require(pc, "length_m", f"pipe {pipe_id}")),
                diameter=float(_require(pc, "diameter_m", f"pipe {pipe_id}")),
                friction=float(_require(pc, "friction_factor", f"pipe {pipe_id}")),
                num_cells=int(pc.get("num_cells", default_cells)),
            ))
        compressors = []
        for cc in cfg.get("compressors", []):
            comp_id = str(_require(cc, "id", "compressor"))
            pmax = cc.get("power_max_MW")
            compressors.append(CompressorSpec(
                id=comp_id,
                from_node=str(_require(cc, "from", f"compressor {comp_id}")),
                to_node=str(_require(cc, "to", f"compressor {comp_id}")),
                efficiency=float(_require(cc, "efficiency", f"compressor {comp_id}")),
                beta_min=float(cc.get("beta_min", 1.0)),
                beta_max=float(cc.get("beta_max", 2.0)),
                power_max=None if pmax is None else float(pmax) * MW,
            ))
        demands = {
            str(node_id): _demand_profile_from_config(dc, str(node_id))
            for node_id, dc in cfg.get("demands", {}).items()
        }
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"malformed network config: {exc}") from exc
    return NetworkModel(gas=gas, nodes=nodes, pipes=pipes,
                        compressors=compressors, demands=demands)


def load_network(path: str | Path) -> NetworkModel:
    """Read a network JSON file and convert it to SI units."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"network config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"network config is not valid JSON: {path}: {exc}") from exc
    return network_from_dict(cfg)
