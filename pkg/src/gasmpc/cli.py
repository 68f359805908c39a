"""Command-line interface: validate, css, run, compare.

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 invariant violation detected by the post-run self-checks.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .css import CssLibrary, solve_css
from .experiment import (
    ExperimentConfig,
    comparison_row,
    compatibility_issues,
    ensure_css,
    load_experiment,
    run_experiment,
    self_check,
)
from .network import ConfigError, load_network, validate_network
from .plant import PlantError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INVARIANT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasmpc",
        description="Economic model-predictive control of gas pipeline networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, many_configs=False):
        if many_configs:
            p.add_argument("--config", required=True, nargs="+",
                           help="experiment file(s) to process")
        else:
            p.add_argument("--config", required=True,
                           help="experiment or network file to process")
        p.add_argument("--seed", type=int, default=None,
                       help="override the uncertainty seed")
        p.add_argument("--out", default=None,
                       help="override the output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs / recompute caches")
        p.add_argument("--auto-css", action="store_true",
                       help="compute missing reference orbits instead of failing")
        p.add_argument("--parallel-scenarios", action="store_true",
                       help="solve per-level reference orbits in parallel")

    add_common(sub.add_parser("validate", help="check a network or experiment file"))
    add_common(sub.add_parser("css", help="solve/cache the reference orbits"))
    add_common(sub.add_parser("run", help="run one closed-loop experiment"))
    add_common(sub.add_parser("compare", help="run/compare several experiments"),
               many_configs=True)
    return parser


def _load(path: str, args) -> ExperimentConfig:
    return load_experiment(path, seed=args.seed,
                           out=None if args.out is None else Path(args.out))


def cmd_validate(args) -> int:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        print(f"error: file not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: {path}: not valid JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(raw, dict) and "network" in raw and "nodes" not in raw:
        cfg = _load(args.config, args)
        print(f"experiment {cfg.name!r} OK  "
              f"(network {cfg.network_path.name}, hash {cfg.config_hash})")
        report = validate_network(cfg.network)
    else:
        net = load_network(path)
        report = validate_network(net)
        if not report.ok:
            print(str(report), file=sys.stderr)
            return EXIT_CONFIG
        print(f"network OK  ({len(net.nodes)} nodes, {len(net.pipes)} pipes, "
              f"{len(net.compressors)} compressors)")
    if not report.ok:
        print(str(report), file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_css(args) -> int:
    cfg = _load(args.config, args)
    lib = CssLibrary(cfg.css_cache)
    rows = []
    for level in cfg.levels:
        cached = lib.load(cfg.network, cfg.controller.period_steps,
                          cfg.controller.dt_seconds, level)
        if cached is not None and cached.success and not args.force:
            rows.append((level, cached, True))
            continue
        css = solve_css(cfg.network, cfg.controller.period_steps,
                        cfg.controller.dt_seconds, demand_level=level)
        if css.success:
            lib.store(cfg.network, css)
        rows.append((level, css, False))

    print(f"reference orbits for {cfg.name!r} "
          f"(K={cfg.controller.period_steps}, dt={cfg.controller.dt_seconds:g}s)")
    print(f"{'level':<10} {'energy MWh/cycle':>18} {'status':>12} "
          f"{'iterations':>11} {'cached':>7}")
    failed = False
    for level, css, was_cached in rows:
        print(f"{level:<10} {css.objective_mwh:>18.6f} {css.status:>12} "
              f"{css.iterations:>11d} {'yes' if was_cached else 'no':>7}")
        failed = failed or not css.success
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    art = run_experiment(cfg, force=args.force, auto_css=args.auto_css,
                         parallel=args.parallel_scenarios)
    failures = self_check(art, cfg)
    summ = art.summary
    print(f"run {cfg.name!r}: {cfg.num_steps} steps, "
          f"total energy {summ['total_energy_mwh']:.6f} MWh")
    v = summ["violations"]
    print(f"  pressure violations: {v['pressure_steps']} steps "
          f"(max {v['max_pressure_violation_pa']:.1f} Pa), "
          f"shortfall {v['total_shortfall_kg']:.3f} kg")
    s = summ["solver"]
    print(f"  solves: mean {s['mean_solve_seconds']*1e3:.0f} ms, "
          f"max {s['max_solve_seconds']*1e3:.0f} ms, "
          f"fallbacks {s['controller_fallbacks']}, "
          f"elastic plant steps {s['plant_elastic_steps']}")
    print(f"  artifacts: {art.summary_path.parent}")
    if failures:
        for f in failures:
            print(f"  SELF-CHECK FAILED: {f}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_compare(args) -> int:
    configs: list[ExperimentConfig] = []
    for raw_path in args.config:
        cfg = load_experiment(raw_path, seed=args.seed)
        if args.out is not None:
            cfg.output = Path(args.out) / cfg.name
        configs.append(cfg)

    rows = []
    worst = EXIT_OK
    for cfg in configs:
        summary_path = cfg.output / "summary.json"
        if summary_path.exists() and not args.force:
            summary = json.loads(summary_path.read_text())
            if summary.get("metadata", {}).get("config_hash") != cfg.config_hash:
                print(f"note: {cfg.name}: existing artifacts were built from a "
                      "different configuration; rerunning", file=sys.stderr)
                summary = None
        else:
            summary = None
        if summary is None:
            art = run_experiment(cfg, force=True, auto_css=args.auto_css,
                                 parallel=args.parallel_scenarios)
            failures = self_check(art, cfg)
            if failures:
                for f in failures:
                    print(f"{cfg.name}: SELF-CHECK FAILED: {f}", file=sys.stderr)
                worst = max(worst, EXIT_INVARIANT)
            summary = art.summary
        rows.append(comparison_row(cfg, summary))

    base = configs[0]
    flags = {base.name: ""}
    for other in configs[1:]:
        issues = compatibility_issues(base, other)
        flags[other.name] = f"  [incompatible: {'; '.join(issues)}]" if issues else ""

    print(f"{'experiment':<32} {'energy MWh':>12} {'violations':>11} "
          f"{'shortfall kg':>13} {'variables':>10} {'constraints':>12} "
          f"{'avg solve s':>12}")
    for row in rows:
        print(f"{row['name']:<32} {row['energy_mwh']:>12.6f} "
              f"{row['pressure_violation_steps']:>11d} "
              f"{row['shortfall_kg']:>13.3f} "
              f"{row['nlp_variables']:>10d} {row['nlp_constraints']:>12d} "
              f"{row['mean_solve_seconds']:>12.3f}"
              f"{flags.get(row['name'], '')}")
    return worst


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"validate": cmd_validate, "css": cmd_css,
                "run": cmd_run, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlantError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
