"""Bias and coverage experiment over simulated datasets.

Each replicate draws a fresh surveillance campaign under the configured
truth, fits the reduced-size model, and records whether the 90% interval
for the introduction month and the 90% highest-density region for the
location cover the truth.  Replicate failures are recorded and excluded,
never fatal.  Results are reduced in replicate order, so thread count does
not change the output.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError
from .grid import CovariateRaster
from .mcmc import run_mcmc
from .observation import SusceptibilityDesign
from .posterior import hpd_region, location_posterior_map, summarize_marginals
from .simulate import build_covariates, dataset_rng, fit_seed, generate_dataset

REGION_LEVEL = 0.90


@dataclass
class ReplicateResult:
    setting: str
    replicate: int
    ok: bool
    error: str = ""
    n_positive: int = 0
    t0_true: int = 0
    t0_median: float = math.nan
    t0_error_months: float = math.nan
    t0_covered: bool = False
    omega_error_km: float = math.nan
    omega_covered: bool = False


@dataclass
class SettingSummary:
    name: str
    n_ok: int
    n_failed: int
    t0_coverage: float
    omega_coverage: float
    t0_mean_error: float
    t0_error_se: float
    omega_mean_error: float


@dataclass
class ExperimentReport:
    replicates: list[ReplicateResult]
    settings: list[SettingSummary]

    def format(self) -> str:
        lines = ["coverage experiment"]
        for s in self.settings:
            lines.append(f"setting {s.name}: {s.n_ok} ok, {s.n_failed} failed")
            if s.n_ok < 20:
                lines.append("  note: fewer than 20 usable replicates; coverage is noisy")
            lines.append(f"  t0 90% CI coverage: {s.t0_coverage:.3f}")
            lines.append(f"  omega 90% region coverage: {s.omega_coverage:.3f}")
            lines.append(
                f"  t0 signed error (months): mean {s.t0_mean_error:.3f}, se {s.t0_error_se:.3f}"
            )
            lines.append(f"  omega error (km): mean {s.omega_mean_error:.3f}")
        return "\n".join(lines)


def run_replicate(
    config: RunConfig,
    replicate: int,
    covariates: CovariateRaster | None = None,
    level: float = REGION_LEVEL,
) -> ReplicateResult:
    """Generate, fit, and score one replicate."""
    exp = config.experiment
    truth = exp.truth
    result = ReplicateResult(
        setting=exp.name, replicate=replicate, ok=False, t0_true=truth.t0
    )
    try:
        if covariates is None:
            covariates = build_covariates(config)
        samples, _ = generate_dataset(config, dataset_rng(config.seed, replicate), covariates)
        result.n_positive = int(samples.y.sum())
        mcfg = replace(config.mcmc, seed=fit_seed(config.seed, replicate))
        chains = run_mcmc(
            samples, covariates, config.prior, mcfg,
            design=SusceptibilityDesign(config.species),
            z_layers=config.z_layers, w_layers=config.w_layers,
        )
        summary = summarize_marginals(chains, level)
        _, t0_med, t0_lo, t0_hi = summary.table["t0"]
        result.t0_median = t0_med
        result.t0_error_months = t0_med - truth.t0
        result.t0_covered = bool(t0_lo <= truth.t0 <= t0_hi)

        prob_map = location_posterior_map(chains, config.grid)
        region = hpd_region(prob_map, level, grid=config.grid)
        covered = True
        errs = []
        for j in range(truth.n_events):
            x_true, y_true = truth.omega[j]
            r, c = config.grid.fine_index(x_true, y_true)
            covered = covered and bool(region.cells[r, c])
            if truth.n_events == 1:
                x_hat = summary.table["omega_x"][0]
                y_hat = summary.table["omega_y"][0]
            else:
                x_hat = summary.table[f"omega_x_{j + 1}"][0]
                y_hat = summary.table[f"omega_y_{j + 1}"][0]
            errs.append(
                min(
                    math.hypot(x_hat - xt, y_hat - yt)
                    for xt, yt in truth.omega
                )
            )
        result.omega_covered = covered
        result.omega_error_km = float(np.mean(errs))
        result.ok = True
    except Exception as e:  # replicate failures are data, not crashes
        result.error = f"{type(e).__name__}: {e}"
    return result


def _replicate_task(args) -> ReplicateResult:
    config, replicate, covariates = args
    return run_replicate(config, replicate, covariates)


def run_experiment(
    configs: Sequence[RunConfig], threads: int = 1
) -> ExperimentReport:
    """All settings, all replicates; aggregates per setting."""
    all_results: list[ReplicateResult] = []
    summaries: list[SettingSummary] = []
    for config in configs:
        if config.experiment is None:
            raise ConfigurationError(f"{config.path}: config has no experiment section")
        covariates = build_covariates(config)
        tasks = [(config, r, covariates) for r in range(config.experiment.replicates)]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_replicate_task, tasks))
        else:
            results = [_replicate_task(t) for t in tasks]
        all_results.extend(results)
        summaries.append(_aggregate(config.experiment.name, results))
    return ExperimentReport(replicates=all_results, settings=summaries)


def _aggregate(name: str, results: Sequence[ReplicateResult]) -> SettingSummary:
    ok = [r for r in results if r.ok]
    n_ok = len(ok)
    if n_ok == 0:
        return SettingSummary(
            name=name, n_ok=0, n_failed=len(results),
            t0_coverage=math.nan, omega_coverage=math.nan,
            t0_mean_error=math.nan, t0_error_se=math.nan, omega_mean_error=math.nan,
        )
    t0_errors = np.array([r.t0_error_months for r in ok])
    se = float(t0_errors.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
    return SettingSummary(
        name=name,
        n_ok=n_ok,
        n_failed=len(results) - n_ok,
        t0_coverage=float(np.mean([r.t0_covered for r in ok])),
        omega_coverage=float(np.mean([r.omega_covered for r in ok])),
        t0_mean_error=float(t0_errors.mean()),
        t0_error_se=se,
        omega_mean_error=float(np.mean([r.omega_error_km for r in ok])),
    )


def write_experiment_report(out_dir: str | os.PathLike, report: ExperimentReport) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "replicates.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "setting", "replicate", "ok", "error", "n_positive", "t0_true",
                "t0_median", "t0_error_months", "t0_covered",
                "omega_error_km", "omega_covered",
            ]
        )
        for r in report.replicates:
            w.writerow(
                [
                    r.setting, r.replicate, int(r.ok), r.error, r.n_positive,
                    r.t0_true, repr(r.t0_median), repr(r.t0_error_months),
                    int(r.t0_covered), repr(r.omega_error_km), int(r.omega_covered),
                ]
            )
    with open(os.path.join(out_dir, "experiment_report.txt"), "w") as f:
        f.write(report.format() + "\n")
