"""Experiment configuration and orchestration behind the command line.

An experiment file names a network, a controller setup, a demand-uncertainty
realization and a step budget.  This module loads and validates those files,
manages the cyclic-steady-state references each controller needs (disk-cached
per demand level), runs the closed loop, persists its artifacts, and
re-checks the run's core invariants from the written files.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerConfig
from .css import CssLibrary, CssSolution
from .network import ConfigError, NetworkModel, load_network, validate_network
from .nlp.problem import SolverOptions
from .plant import (
    ClosedLoopTrace,
    PlantError,
    UncertaintyMode,
    UncertaintyRealization,
    run_closed_loop,
)

_CONTROLLER_KINDS = ("nominal", "multistage")
_SOLVER_FIELDS = frozenset(SolverOptions.__dataclass_fields__)


@dataclass
class ExperimentConfig:
    """One resolved experiment: network, controller, uncertainty, outputs."""

    name: str
    path: Path
    network_path: Path
    network: NetworkModel
    kind: str
    controller: ControllerConfig
    uncertainty: UncertaintyRealization
    num_steps: int
    output: Path
    css_cache: Path
    canonical: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.canonical, sort_keys=True, separators=(",", ":"))
        h = hashlib.sha256()
        h.update(payload.encode())
        h.update(self.network.content_hash().encode())
        return h.hexdigest()[:12]

    @property
    def levels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.controller.scenario_levels))


def _require(cfg: dict, key: str, ctx: str):
    if key not in cfg:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return cfg[key]


def load_experiment(path: str | Path, *, seed: int | None = None,
                    out: str | Path | None = None) -> ExperimentConfig:
    """Load and validate one experiment file; optional seed/output overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"experiment file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: experiment file must hold a JSON object")

    ctx = str(path)
    name = str(raw.get("name", path.stem))
    network_rel = str(_require(raw, "network", ctx))
    network_path = (path.parent / network_rel).resolve()
    net = load_network(network_path)
    report = validate_network(net)
    if not report.ok:
        raise ConfigError(f"{network_path}: invalid network:\n{report}")

    ctl_raw = dict(raw.get("controller", {}))
    kind = str(ctl_raw.pop("kind", "nominal"))
    if kind not in _CONTROLLER_KINDS:
        raise ConfigError(f"{ctx}: controller.kind must be one of {_CONTROLLER_KINDS}")
    levels = tuple(ctl_raw.pop("scenario_levels",
                               ("nominal",) if kind == "nominal"
                               else ("min", "nominal", "max")))
    if kind == "nominal" and len(levels) != 1:
        raise ConfigError(f"{ctx}: a nominal controller takes exactly one demand level")
    if not levels:
        raise ConfigError(f"{ctx}: scenario_levels must not be empty")

    solver_raw = dict(raw.get("solver", {}))
    unknown = set(solver_raw) - _SOLVER_FIELDS
    if unknown:
        raise ConfigError(f"{ctx}: unknown solver options {sorted(unknown)}")
    defaults = ControllerConfig().solver
    solver = SolverOptions(**{**{
        f: getattr(defaults, f) for f in _SOLVER_FIELDS}, **solver_raw})

    known_ctl = {
        "prediction_periods", "period_steps", "dt_seconds", "robust_horizon",
        "descent_fraction", "stability_slack", "slack_weight",
        "elastic_sink_pressure", "elastic_weight", "reevaluate_previous_value",
    }
    unknown = set(ctl_raw) - known_ctl
    if unknown:
        raise ConfigError(f"{ctx}: unknown controller options {sorted(unknown)}")
    try:
        controller = ControllerConfig(scenario_levels=levels, solver=solver, **ctl_raw)
    except TypeError as exc:
        raise ConfigError(f"{ctx}: bad controller options ({exc})") from exc
    if not (0.0 < controller.descent_fraction <= 1.0):
        raise ConfigError(f"{ctx}: descent_fraction must lie in (0, 1]")
    if controller.slack_weight < 0.0:
        raise ConfigError(f"{ctx}: slack_weight must be nonnegative")
    if controller.prediction_periods < 1 or controller.period_steps < 1:
        raise ConfigError(f"{ctx}: horizon lengths must be positive")
    if controller.robust_horizon < 1:
        raise ConfigError(f"{ctx}: robust_horizon must be at least 1")

    unc_raw = dict(raw.get("uncertainty", {}))
    mode_name = str(unc_raw.get("mode", "nominal"))
    try:
        mode = UncertaintyMode(mode_name)
    except ValueError as exc:
        raise ConfigError(f"{ctx}: unknown uncertainty mode {mode_name!r}") from exc
    if mode is UncertaintyMode.REPLAY:
        raise ConfigError(f"{ctx}: replay uncertainty is built programmatically, "
                          "not from experiment files")
    used_seed = int(unc_raw.get("seed", 0)) if seed is None else int(seed)
    uncertainty = UncertaintyRealization(mode, seed=used_seed)

    num_steps = int(raw.get("num_steps", 3 * controller.period_steps))
    if num_steps < 1:
        raise ConfigError(f"{ctx}: num_steps must be positive")

    if out is not None:
        output = Path(out)
    elif "output" in raw:
        output = (path.parent / str(raw["output"])).resolve()
    else:
        output = Path.cwd() / "runs" / name
    css_cache = (path.parent / str(raw.get("css_cache", ".css-cache"))).resolve()

    canonical = {
        "name": name,
        "network": net.to_canonical_dict(),
        "controller": {
            "kind": kind,
            "scenario_levels": list(levels),
            **{f: getattr(controller, f) for f in sorted(known_ctl)},
        },
        "solver": {f: getattr(solver, f) for f in sorted(_SOLVER_FIELDS)
                   if f != "log_path"},
        "uncertainty": {"mode": mode.value, "seed": used_seed},
        "num_steps": num_steps,
    }
    return ExperimentConfig(
        name=name, path=path, network_path=network_path, network=net,
        kind=kind, controller=controller, uncertainty=uncertainty,
        num_steps=num_steps, output=output, css_cache=css_cache,
        canonical=canonical)


# ---------------------------------------------------------------------------
# CSS management
# ---------------------------------------------------------------------------


def ensure_css(cfg: ExperimentConfig, *, auto: bool = True,
               parallel: bool = False) -> dict[str, CssSolution]:
    """Fetch (or compute) the reference orbit for every demand level used."""
    lib = CssLibrary(cfg.css_cache)
    levels = cfg.levels
    if not auto:
        missing = [lv for lv in levels
                   if lib.load(cfg.network, cfg.controller.period_steps,
                               cfg.controller.dt_seconds, lv) is None]
        if missing:
            raise ConfigError(
                f"no cached reference orbit for demand level(s) {missing}; "
                "run the 'css' command first or pass --auto-css")

    def solve(level: str) -> tuple[str, CssSolution]:
        return level, lib.solve_or_load(
            cfg.network, cfg.controller.period_steps, cfg.controller.dt_seconds,
            demand_level=level)

    if parallel and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=len(levels)) as pool:
            results = dict(pool.map(solve, levels))
    else:
        results = dict(solve(lv) for lv in levels)
    for level, css in results.items():
        if not css.success:
            raise PlantError(
                f"reference-orbit solve failed for level {level!r}: {css.status}")
    return results


# ---------------------------------------------------------------------------
# running and self-checking
# ---------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    trace: ClosedLoopTrace
    summary: dict
    csv_paths: dict[str, Path]
    summary_path: Path
    config_path: Path


def run_experiment(cfg: ExperimentConfig, *, force: bool = False,
                   auto_css: bool = True, parallel: bool = False) -> RunArtifacts:
    """Run one experiment end to end and persist its artifacts."""
    outdir = cfg.output
    if outdir.exists() and any(outdir.iterdir()) and not force:
        raise ConfigError(
            f"output directory {outdir} is not empty; pass --force to overwrite")
    css_by_level = ensure_css(cfg, auto=auto_css, parallel=parallel)
    trace = run_closed_loop(
        cfg.network, cfg.controller, cfg.uncertainty, cfg.num_steps,
        css_by_level,
        metadata={"config_hash": cfg.config_hash, "seed": cfg.uncertainty.seed,
                  "experiment": cfg.name,
                  "uncertainty_mode": cfg.uncertainty.mode.value})
    outdir.mkdir(parents=True, exist_ok=True)
    csv_paths = trace.write_csvs(outdir)
    summary = trace.summary()
    summary["css_objective_mwh"] = {
        lv: css.objective_mwh for lv, css in css_by_level.items()}
    summary_path = outdir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    config_path = outdir / "experiment.json"
    config_path.write_text(json.dumps(
        {"config_hash": cfg.config_hash, "seed": cfg.uncertainty.seed,
         **cfg.canonical}, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(trace=trace, summary=summary, csv_paths=csv_paths,
                        summary_path=summary_path, config_path=config_path)


def recompute_energy_from_csv(path: Path, dt_seconds: float) -> float:
    """Total energy (MWh) re-derived from the persisted compressor trace."""
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    cols = [i for i, h in enumerate(header) if h.endswith(".power.MW")]
    total = 0.0
    for line in lines[1:]:
        cells = line.split(",")
        total += sum(float(cells[i]) for i in cols) * (dt_seconds / 3600.0)
    return total


def self_check(art: RunArtifacts, cfg: ExperimentConfig) -> list[str]:
    """Re-verify run invariants from the trace and the written artifacts."""
    failures: list[str] = []
    trace = art.trace

    worst = max(trace.mass_balance_rel_error, default=0.0)
    if worst > 1e-8:
        failures.append(f"mass balance closes to {worst:.3e} relative (limit 1e-8)")

    recomputed = recompute_energy_from_csv(art.csv_paths["compressors"],
                                           trace.dt_seconds)
    reported = art.summary["total_energy_mwh"]
    rel = abs(recomputed - reported) / max(1.0, abs(reported))
    if rel > 1e-8:
        failures.append(
            f"energy recompute from CSV differs by {rel:.3e} relative (limit 1e-8)")

    if cfg.uncertainty.mode is UncertaintyMode.UNIFORM_ENVELOPE:
        K = trace.period_steps
        for sink, series in trace.demands.items():
            profile = cfg.network.demands.get(sink)
            if profile is None:
                continue
            for i, value in enumerate(series):
                phase = trace.phases[i] % K
                lo = profile.envelope_min[phase % len(profile.envelope_min)]
                hi = profile.envelope_max[phase % len(profile.envelope_max)]
                if not (lo - 1e-12 <= value <= hi + 1e-12):
                    failures.append(
                        f"realized demand for {sink} at step {i} left its envelope")
                    break
    return failures


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


def comparison_row(cfg: ExperimentConfig, summary: dict) -> dict:
    md = summary.get("metadata", {})
    violations = summary.get("violations", {})
    solver = summary.get("solver", {})
    return {
        "name": cfg.name,
        "kind": cfg.kind,
        "energy_mwh": summary.get("total_energy_mwh"),
        "pressure_violation_steps": violations.get("pressure_steps"),
        "max_violation_pa": violations.get("max_pressure_violation_pa"),
        "shortfall_kg": violations.get("total_shortfall_kg"),
        "nlp_variables": md.get("nlp_variables"),
        "nlp_constraints": md.get("nlp_constraints"),
        "mean_solve_seconds": solver.get("mean_solve_seconds"),
        "config_hash": md.get("config_hash", cfg.config_hash),
        "seed": md.get("seed", cfg.uncertainty.seed),
    }


def compatibility_issues(base: ExperimentConfig, other: ExperimentConfig) -> list[str]:
    """Reasons two experiments cannot be compared like for like."""
    issues = []
    if base.network.content_hash() != other.network.content_hash():
        issues.append("different networks")
    if base.controller.period_steps != other.controller.period_steps \
            or base.controller.dt_seconds != other.controller.dt_seconds:
        issues.append("different cycle discretizations")
    if base.num_steps != other.num_steps:
        issues.append("different run lengths")
    if (base.uncertainty.mode, base.uncertainty.seed) != \
            (other.uncertainty.mode, other.uncertainty.seed):
        issues.append("different demand realizations")
    return issues
