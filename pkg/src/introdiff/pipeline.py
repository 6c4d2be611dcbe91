"""End-to-end fit: data in, chains + summaries + maps + report out.

The directory layout is fixed (``chains/``, ``summaries/``, ``maps/``,
``forecasts/``, ``report.txt``) and every file is a pure function of the
inputs and the seed; reruns are byte-identical.  Failures carry the name
of the stage that raised them.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from .config import RunConfig
from .diagnostics import chain_diagnostics
from .errors import ConfigurationError, IntrodiffError
from .glm import glm_baseline
from .mcmc import run_mcmc, write_chains_csv
from .months import format_month
from .observation import SampleSet, SusceptibilityDesign, read_samples_csv
from .posterior import (
    exceedance_region,
    forecast,
    hpd_region,
    location_posterior_map,
    posterior_rate_maps,
    summarize_marginals,
    write_forecast_csv,
    write_probability_raster,
    write_region_raster,
    write_summary_csv,
    write_year_pmf_csv,
)
from .simulate import build_covariates


class StageFailure(IntrodiffError):
    """An error tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, original: BaseException):
        super().__init__(f"stage {stage!r}: {original}")
        self.stage = stage
        self.original = original


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        raise StageFailure(name, e) from e


def _feature_layers(config: RunConfig) -> list[str]:
    layers = list(config.z_layers)
    layers += [n for n in config.w_layers if n not in layers]
    return layers


def pipeline_fit(config: RunConfig, out_dir: str, threads: int = 1) -> str:
    """Run the whole fit; returns the report path."""
    report_lines = [
        "introduction fit report",
        f"config: {os.path.basename(config.path)}",
        f"seed: {config.seed}",
    ]
    grid = config.grid
    with _stage("load-covariates"):
        covariates = build_covariates(config)
    with _stage("load-samples"):
        if config.samples_path is None:
            raise ConfigurationError("config has no data.samples to fit")
        samples = read_samples_csv(config.samples_path)
        samples.validate_on(grid)
        design = SusceptibilityDesign(config.species)
        design.encode_many(samples.species.tolist())  # unknown species fail here
    report_lines.append(
        f"samples: {len(samples)} total, {int(samples.y.sum())} positive"
    )
    with _stage("fit"):
        chains = run_mcmc(
            samples, covariates, config.prior, config.mcmc,
            design=design, z_layers=config.z_layers, w_layers=config.w_layers,
            threads=threads,
        )
    report_lines.append(
        f"chains: {len(chains)} x {len(chains[0].draws)} retained draws "
        f"({config.mcmc.n_iterations} iterations, {config.mcmc.n_burnin} burn-in, "
        f"thin {config.mcmc.thin})"
    )
    with _stage("write-chains"):
        chains_dir = os.path.join(out_dir, "chains")
        os.makedirs(chains_dir, exist_ok=True)
        write_chains_csv(os.path.join(chains_dir, "chains.csv"), chains)
    with _stage("diagnostics"):
        diag = chain_diagnostics(chains)
        report_lines.append("diagnostics:")
        report_lines.extend("  " + line for line in diag.format().splitlines())
    with _stage("summaries"):
        summaries_dir = os.path.join(out_dir, "summaries")
        os.makedirs(summaries_dir, exist_ok=True)
        summary = summarize_marginals(chains, 0.90)
        write_summary_csv(os.path.join(summaries_dir, "marginals.csv"), summary)
        write_year_pmf_csv(os.path.join(summaries_dir, "year_pmf.csv"), summary)
        _, t0_med, t0_lo, t0_hi = summary.table["t0"]
        top_year = max(summary.year_pmf, key=lambda y: (summary.year_pmf[y], -y))
        report_lines.append(
            f"t0: median {format_month(int(round(t0_med)))}, 90% CI "
            f"[{format_month(int(round(t0_lo)))}, {format_month(int(round(t0_hi)))}]"
        )
        report_lines.append(
            f"most probable introduction year: {top_year} "
            f"(p={summary.year_pmf[top_year]:.3f})"
        )
    with _stage("maps"):
        maps_dir = os.path.join(out_dir, "maps")
        os.makedirs(maps_dir, exist_ok=True)
        prob_map = location_posterior_map(chains, grid)
        write_probability_raster(
            os.path.join(maps_dir, "location_posterior.asc"), prob_map, grid
        )
        region = hpd_region(prob_map, 0.90, grid=grid)
        write_region_raster(os.path.join(maps_dir, "hpd_region_90.asc"), region, grid)
        report_lines.append(
            f"90% region: {region.n_cells} cells, {region.area_km2:.1f} km2 "
            f"(attained {region.level:.3f})"
        )
        mu_map, lam_map = posterior_rate_maps(
            chains, covariates, config.z_layers, config.w_layers
        )
        write_probability_raster(os.path.join(maps_dir, "mu_mean.asc"), mu_map, grid)
        write_probability_raster(os.path.join(maps_dir, "lambda_mean.asc"), lam_map, grid)
        if config.reference_point is not None:
            exc = exceedance_region(prob_map, config.reference_point, grid)
            write_region_raster(
                os.path.join(maps_dir, "exceedance_region.asc"), exc, grid
            )
            report_lines.append(
                f"exceedance region vs ({config.reference_point[0]}, "
                f"{config.reference_point[1]}): level {exc.level:.3f}, "
                f"{exc.area_km2:.1f} km2, reaching {exc.farthest_km:.1f} km at "
                f"bearing {exc.farthest_bearing_deg:.1f} deg"
            )
    if config.holdout_path is not None:
        with _stage("forecast"):
            forecasts_dir = os.path.join(out_dir, "forecasts")
            os.makedirs(forecasts_dir, exist_ok=True)
            holdout = read_samples_csv(config.holdout_path)
            report_lines.extend(
                _forecast_and_score(
                    config, covariates, chains, samples, holdout, forecasts_dir
                )
            )
    with _stage("report"):
        report_path = os.path.join(out_dir, "report.txt")
        with open(report_path, "w") as f:
            f.write("\n".join(report_lines) + "\n")
    return report_path


def _forecast_and_score(
    config: RunConfig,
    covariates,
    chains,
    train: SampleSet,
    holdout: SampleSet,
    out_dir: str,
) -> list[str]:
    design = SusceptibilityDesign(config.species)
    points = [
        (float(holdout.x_km[i]), float(holdout.y_km[i]), int(holdout.date[i]), str(holdout.species[i]))
        for i in range(len(holdout))
    ]
    result = forecast(
        chains, points, covariates,
        design=design, z_layers=config.z_layers, w_layers=config.w_layers,
        steps_per_month=config.steps_per_month,
    )
    write_forecast_csv(os.path.join(out_dir, "forecast.csv"), result)
    lines = [
        f"forecast: {len(result)} holdout records, {result.n_draws} draws, "
        f"{result.n_failed_draws} failed solves, {len(result.errors)} record errors"
    ]
    ok = result.valid()
    if ok.any():
        model_rate = float((result.label[ok] != holdout.y[ok]).mean())
        lines.append(f"model misclassification: {model_rate:.4f}")
        feature_layers = _feature_layers(config)
        train_rows, train_cols = train.fine_cells(config.grid)
        hold_rows, hold_cols = holdout.fine_cells(config.grid)
        glm_probs, fit = glm_baseline(
            covariates.values_at(feature_layers, train_rows, train_cols),
            list(train.species),
            train.y,
            covariates.values_at(feature_layers, hold_rows[ok], hold_cols[ok]),
            list(holdout.species[ok]),
            config.species,
        )
        glm_labels = (glm_probs >= 0.5).astype(int)
        glm_rate = float((glm_labels != holdout.y[ok]).mean())
        lines.append(f"glm misclassification: {glm_rate:.4f}")
        for w in fit.warnings:
            lines.append(f"glm warning: {w}")
        with open(os.path.join(out_dir, "scores.txt"), "w") as f:
            f.write(
                "\n".join(
                    [
                        f"n_scored: {int(ok.sum())}",
                        f"model_misclassification: {model_rate!r}",
                        f"glm_misclassification: {glm_rate!r}",
                    ]
                )
                + "\n"
            )
    return lines
