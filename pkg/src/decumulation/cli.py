"""
Command-line driver: solve, simulate and summarise every scenario of the matrix.

Output layout under the output directory::

    run_manifest.json                resolved parameters, a75, calibration
    table1.csv                       statistics x scenarios
    grid_convergence.csv             with --grid-study
    <scenario>/V.csv, y.csv, c.csv   solver lattices
    <scenario>/summary.csv
    <scenario>/histogram.csv         bin_left, bin_right, count (+ atom row)
    <scenario>/wealth_percentiles.csv, invest_percentiles.csv
    <scenario>/paths/                with --dump-paths
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .analytics import STAT_ROWS, ScenarioSummary, histogram, percentiles, summarize
from .config import ConfigError, RunConfig, Scenario, build_config, load_config, parse_ratio
from .simulator import dump_paths_csv, simulate_ensemble
from .solver import closed_stability_bound, recursive_stability_bound, solve

log = logging.getLogger("decumulation")

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")


def table_value(summary: ScenarioSummary, name: str) -> float:
    value = getattr(summary, name)
    return 100.0 * value if name.startswith("prob") else value


def run_scenario(config: RunConfig, scenario: Scenario, out_dir: str,
                 dump_paths: bool = False) -> tuple[ScenarioSummary, dict]:
    """Solve, simulate and write the per-scenario files."""
    spec = config.problem(scenario)
    grid = config.grid(spec)
    sol = solve(spec, grid, config.solver)
    ens = simulate_ensemble(sol, spec, config.paths)
    summary = summarize(ens, spec, config.Tm)

    folder = Path(out_dir) / scenario.key
    sol.to_csv(folder)
    _write_rows(folder / "summary.csv", ["statistic", "value"],
                [(name, table_value(summary, name)) for name, _ in STAT_ROWS])
    hist = histogram(ens, spec)
    rows = [(lo, hi, str(n)) for lo, hi, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    rows.append(("atom", "atom", str(hist.atom_count)))
    _write_rows(folder / "histogram.csv", ["bin_left", "bin_right", "count"], rows)
    for field_name, t in (("wealth", ens.t), ("invest", ens.t[:-1])):
        q = percentiles(ens, QUANTILES, field_name)
        _write_rows(folder / f"{field_name}_percentiles.csv",
                    ["t"] + [f"q{round(100 * p):02d}" for p in QUANTILES],
                    [(ti, *q[:, k]) for k, ti in enumerate(t)])
    if dump_paths:
        dump_paths_csv(ens, folder / "paths")

    norms = sol.column_norms
    diagnostics = {
        "max_policy_iterations": int(sol.iterations.max()),
        "max_hjb_residual": float(sol.max_residual.max()),
        "max_column_norm": float(norms.max()),
        "closed_stability_bound": closed_stability_bound(spec),
        "closed_stability_bound_holds": bool(np.all(norms <= closed_stability_bound(spec) + 1e-9)),
        "recursive_stability_bound_holds": bool(
            np.all(norms <= recursive_stability_bound(spec, grid) + 1e-9)),
        "value_at_x0": sol.value_at(0.0, spec.plan.x0),
    }
    return summary, diagnostics


def _scenario_job(args):
    config, scenario, out_dir, dump_paths = args
    try:
        return scenario, run_scenario(config, scenario, out_dir, dump_paths), None
    except Exception as exc:  # reported per scenario
        return scenario, None, f"{type(exc).__name__}: {exc}"


def grid_study(config: RunConfig, scenario: Scenario) -> list[tuple]:
    """V(0, z(x0)) for each N in ``grid_study_N`` with successive-difference ratios."""
    spec = config.problem(scenario)
    values = []
    for n in config.grid_study_N:
        sol = solve(spec, config.grid(spec, n), config.solver)
        values.append(sol.value_at(0.0, spec.plan.x0))
    rows = []
    for k, (n, v) in enumerate(zip(config.grid_study_N, values)):
        diff = values[k - 1] - v if k else float("nan")
        ratio = (values[k - 2] - values[k - 1]) / diff if k >= 2 and diff != 0 else float("nan")
        rows.append((scenario.key, str(n), v, diff, ratio))
    return rows


def run_matrix(config: RunConfig, out_dir: str | None = None, dump_paths: bool = False,
               workers: int = 1, study: bool = False) -> int:
    """Run every scenario; returns a process exit status."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = config.scenarios()
    jobs = [(config, s, str(out), dump_paths) for s in scenarios]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scenario_job, jobs))
    else:
        results = [_scenario_job(j) for j in jobs]

    failures = [(s, err) for s, _, err in results if err]
    done = [(s, res) for s, res, err in results if not err]
    for s, err in failures:
        log.error("scenario %s failed: %s", s.label, err)
    if failures:
        (out / "failures.log").write_text(
            "".join(f"{s.key}: {err}\n" for s, err in failures), encoding="utf-8")

    _write_rows(out / "table1.csv", ["statistic"] + [s.key for s, _ in done],
                [[label] + [table_value(res[0], name) for _, res in done]
                 for name, label in STAT_ROWS])

    if study:
        rows = []
        for s in scenarios:
            rows.extend(grid_study(config, s))
        _write_rows(out / "grid_convergence.csv",
                    ["scenario", "N", "value_at_x0", "change", "change_ratio"], rows)

    calibration = config.calibration()
    if not calibration["ok"]:
        log.warning("annuity calibration miss: a(%g)=%.5f vs x0/C1=%.5f", config.age0,
                    calibration["annuity_at_retirement"], calibration["implied_by_C1"])
    manifest = {
        "parameters": {
            "r": config.market.r, "mu": config.market.mu, "sigma": config.market.sigma,
            "rho": config.rho, "T": config.T, "x0": config.x0, "age0": config.age0,
            "Tm": config.Tm, "C1": config.C1, "A": config.law.a_const,
            "B": config.law.b_coeff, "C": config.law.c_growth,
            "target_multiple": config.target_multiple,
            "safety_multiple": config.safety_multiple, "annuity_rate": config.annuity_rate,
            "N": config.N, "dt": config.dt,
            "solver": asdict(config.solver), "paths": asdict(config.paths),
        },
        "a75": config.a75,
        "F": config.target_multiple * config.C1 * config.a75,
        "S": config.safety_multiple * config.C1 * config.a75,
        "annuity_calibration": calibration,
        "sd_convention": "sample (n-1)",
        "scenarios": {s.key: {"c2_ratio": s.c2_ratio, "kappa": s.kappa, **res[1]}
                      for s, res in done},
        "failed_scenarios": [s.key for s, _ in failures],
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return 1 if failures else 0


def _list(text: str) -> list[str]:
    return [p for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="decumulation",
        description="Optimal decumulation with a final-annuity guarantee: "
                    "solve, simulate and tabulate a scenario matrix.")
    ap.add_argument("--config", help="YAML file of parameter overrides")
    ap.add_argument("--out-dir", help="output directory (default: config output_dir)")
    ap.add_argument("--seed", type=int, help="master seed for the Gaussian streams")
    ap.add_argument("--paths", type=int, help="Monte Carlo paths per scenario")
    ap.add_argument("--kappa", type=_list, help="comma-separated running-cost weights")
    ap.add_argument("--c2-ratio", type=_list, help="comma-separated C2/C1 ratios, e.g. 1/2,2/3")
    ap.add_argument("--dump-paths", action="store_true", help="write one CSV per path")
    ap.add_argument("--grid-study", action="store_true",
                    help="also write the N-refinement report grid_convergence.csv")
    ap.add_argument("--workers", type=int, default=1, help="scenarios run in parallel")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> RunConfig:
    raw = {}
    if args.config:
        import yaml

        with open(args.config, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: expected a key-value mapping")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.paths is not None:
        raw["n_paths"] = args.paths
    if args.kappa:
        raw["kappas"] = [parse_ratio(k) for k in args.kappa]
    if args.c2_ratio:
        raw["c2_ratios"] = [parse_ratio(c) for c in args.c2_ratio]
    return build_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return run_matrix(config, args.out_dir, args.dump_paths, args.workers, args.grid_study)


if __name__ == "__main__":
    sys.exit(main())
