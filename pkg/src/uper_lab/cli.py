"""Command-line front end.

``uper-lab <experiment> [--config FILE] [--set key=value ...] [--seeds N]
[--workers K] [--out DIR]`` runs every (scheme, seed) cell, in parallel
across processes when ``--workers`` > 1, and writes one CSV per
(experiment, scheme) plus ``config.json`` and ``summary.json``. Output
depends only on the configuration and seeds. Exit codes: 0 success,
1 some cell failed (partial results are kept), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import appendix_labs, bandit, gridworld
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config_file, parse_assignments, parse_config
from .records import write_csv

log = logging.getLogger("uper_lab")


@dataclass
class CellResult:
    scheme: str
    seed: int
    rows: list[dict[str, object]] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict)
    heatmap: list[list[int]] | None = None
    error: str | None = None


def run_cell(experiment: str, params: Any, scheme: str, seed: int, root_seed: int) -> CellResult:
    """Run one (scheme, seed) cell; exceptions are captured, never raised."""
    try:
        return _run_cell(experiment, params, scheme, seed, root_seed)
    except Exception:  # noqa: BLE001 - a failing cell must not take the run down
        return CellResult(scheme, seed, error=traceback.format_exc(limit=5))


def _run_cell(experiment: str, params: Any, scheme: str, seed: int, root_seed: int) -> CellResult:
    if experiment in ("bandit", "bandit-shifted"):
        records = bandit.run_bandit(params, scheme, seed, root_seed)
        probs = bandit.arm_probability_trace(records)
        summary = bandit.final_metrics(records)
        summary["mean_p_stablest"] = float(probs[:, 0].mean())
        summary["mean_p_noisiest"] = float(probs[:, -1].mean())
        return CellResult(scheme, seed, [r.to_row("step") for r in records], summary)
    if experiment == "gridworld":
        run = gridworld.run_gridworld(params, scheme, seed, root_seed)
        summary = gridworld.run_summary(run, params.threshold_fraction)
        return CellResult(scheme, seed, [r.to_row("episode") for r in run.records()], summary, run.heatmap.tolist())
    if experiment == "posterior-demo":
        trace = appendix_labs.run_posterior_demo(params, seed, root_seed)
        rows = [{"seed": seed, **row} for row in trace.rows()]
        summary = {
            "final_ens_epistemic": float(trace.ens_epistemic[-1]),
            "final_ens_aleatoric": float(trace.ens_aleatoric[-1]),
            "final_bayes_var": float(trace.bayes_var[-1]),
            "final_delta_theta": float(trace.delta_theta[-1]),
        }
        return CellResult(scheme, seed, rows, summary)
    if experiment == "bias-study":
        rows = appendix_labs.run_bias_study(params, seed, root_seed)
        top = max(params.c_grid)
        summary = {f"entropy_at_max_C[{r['form']}]": r["entropy"] for r in rows if r["C"] == top}
        return CellResult(scheme, seed, rows, summary)
    raise ValueError(f"unknown experiment {experiment!r}")


def header(config: ExperimentConfig) -> list[str]:
    exp = config.experiment
    if exp in ("bandit", "bandit-shifted"):
        return ["seed", "step", "scheme", *bandit.record_columns(config.params.n_arms)]
    if exp == "gridworld":
        return ["seed", "episode", "scheme", "test_return"]
    if exp == "posterior-demo":
        return ["seed", *appendix_labs.PosteriorTrace.COLUMNS]
    return list(appendix_labs.BIAS_COLUMNS)


def csv_name(config: ExperimentConfig, scheme: str) -> str:
    if config.experiment in ("posterior-demo", "bias-study"):
        return f"{config.experiment}.csv"
    return f"{config.experiment}_{scheme}.csv"


def execute(config: ExperimentConfig) -> list[CellResult]:
    cells = [(s, seed) for s in config.schemes for seed in config.seeds]
    args = [(config.experiment, config.params, s, seed, config.root_seed) for s, seed in cells]
    if config.workers == 1 or len(cells) == 1:
        return [run_cell(*a) for a in args]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(run_cell, *zip(*args)))


def write_outputs(config: ExperimentConfig, results: Sequence[CellResult]) -> list[dict[str, object]]:
    """Write CSVs and heatmaps in a fixed order; returns the failure list."""
    out = config.out_dir
    cols = header(config)
    failures = []
    for scheme in config.schemes:
        done = sorted((r for r in results if r.scheme == scheme and r.error is None), key=lambda r: r.seed)
        rows = [row for r in done for row in r.rows]
        write_csv(out / csv_name(config, scheme), cols, rows)
        if config.experiment == "gridworld" and done:
            total = np.zeros_like(np.asarray(done[0].heatmap))
            for r in done:
                grid = np.asarray(r.heatmap)
                total += grid
                _write_matrix(out / "heatmaps" / f"gridworld_{scheme}_seed{r.seed}.csv", grid)
            _write_matrix(out / f"gridworld_{scheme}_heatmap.csv", total)
    for r in results:
        if r.error is not None:
            failures.append({"scheme": r.scheme, "seed": r.seed, "error": r.error})
    summary = {
        "experiment": config.experiment,
        "cells": [
            {"scheme": r.scheme, "seed": r.seed, "status": "ok" if r.error is None else "failed", "metrics": r.summary}
            for r in results
        ],
        "failures": failures,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return failures


def _write_matrix(path: Path, grid: np.ndarray) -> None:
    cols = [f"col_{j}" for j in range(grid.shape[1])]
    write_csv(path, cols, [dict(zip(cols, (int(v) for v in row))) for row in grid])


def run(config: ExperimentConfig) -> int:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    (config.out_dir / "config.json").write_text(json.dumps(config.resolved(), indent=2, sort_keys=True) + "\n")
    results = execute(config)
    failures = write_outputs(config, results)
    for f in failures:
        log.error("cell scheme=%s seed=%s failed:\n%s", f["scheme"], f["seed"], f["error"])
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uper-lab", description="Uncertainty-prioritized replay experiments.")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS, help="experiment to run")
    p.add_argument("--config", type=Path, help="flat JSON object of overrides")
    p.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    p.add_argument("--schemes", help="comma-separated priority schemes")
    p.add_argument("--seeds", help="seed count N (seeds base..base+N-1) or a comma list")
    p.add_argument("--seed-base", type=int, help="first seed when --seeds is a count")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="output directory (default $UPER_LAB_OUT or ./results)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides: dict[str, Any] = parse_assignments(args.assignments)
        for key, value in (("schemes", args.schemes), ("seeds", args.seeds), ("seed_base", args.seed_base),
                           ("workers", args.workers), ("out_dir", args.out)):
            if value is not None:
                overrides[key] = value
        config = parse_config(args.experiment, file_values, overrides)
    except ConfigError as exc:
        print(f"uper-lab: config error: {exc}", file=sys.stderr)
        return 2
    log.info("running %s: %d scheme(s) x %d seed(s) -> %s", config.experiment, len(config.schemes), len(config.seeds), config.out_dir)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
