"""Synthetic data: covariate fields, sampling designs, and datasets with
known truth.

Covariate layers are standardized to mean 0, sd 1 over the mask so the
regression coefficients in bundled configs have a stable meaning.  All
randomness flows through explicit generators; nothing here touches global
RNG state.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import RunConfig, SamplingDesign
from .errors import ConfigurationError
from .grid import CovariateRaster, GridSpec
from .mcmc import ParameterState
from .months import format_month
from .observation import SampleSet, SusceptibilityDesign, simulate_samples
from .rasters import load_layer, write_ascii_raster
from .solver import IntensityTrajectory, make_rate_fields, solve_homogenized

# fixed namespaces keep the covariate, dataset, and fit streams independent
_NS_COVARIATE = 7
_NS_DATASET = 13
_NS_FIT = 11


def covariate_rng(seed: int, layer_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _NS_COVARIATE, layer_index]))


def dataset_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _NS_DATASET, replicate]))


def fit_seed(seed: int, replicate: int = 0) -> int:
    return int(np.random.SeedSequence([seed, _NS_FIT, replicate]).generate_state(1)[0])


def synthetic_layer(
    grid: GridSpec, kind: str, amplitude: float, rng: np.random.Generator
) -> np.ndarray:
    """One standardized covariate surface.

    ``smooth`` sums a few low-frequency sinusoids; ``patchy`` draws one
    value per coarse block, which gives the discontinuities homogenization
    is meant to absorb.
    """
    if kind == "smooth":
        xs = (np.arange(grid.n_fine_cols) + 0.5) / grid.n_fine_cols
        ys = (np.arange(grid.n_fine_rows) + 0.5) / grid.n_fine_rows
        X, Y = np.meshgrid(xs, ys)
        f = np.zeros_like(X)
        for _ in range(3):
            fx, fy = rng.integers(1, 3, size=2)
            px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
            f += rng.normal() * np.sin(2.0 * np.pi * fx * X + px) * np.sin(
                2.0 * np.pi * fy * Y + py
            )
    elif kind == "patchy":
        blocks = rng.standard_normal((grid.n_coarse_rows, grid.n_coarse_cols))
        f = np.repeat(np.repeat(blocks, grid.ratio, axis=0), grid.ratio, axis=1)
    else:
        raise ConfigurationError(f"unknown synthetic covariate kind {kind!r}")
    masked = f[grid.domain_mask]
    # ptp, not std: the std of a constant field is only zero up to rounding
    if np.ptp(masked) == 0.0:
        return np.zeros_like(f)
    return (f - masked.mean()) / masked.std() * amplitude


def build_covariates(config: RunConfig) -> CovariateRaster:
    """Load file-backed layers and synthesize the generated ones."""
    cov = CovariateRaster(config.grid)
    for i, source in enumerate(config.covariates):
        if source.path is not None:
            load_layer(cov, source.name, source.path)
        else:
            cov.add_layer(
                source.name,
                synthetic_layer(
                    config.grid, source.synthetic, source.amplitude,
                    covariate_rng(config.seed, i),
                ),
            )
    return cov


def export_covariates(config: RunConfig, cov: CovariateRaster, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for source in config.covariates:
        path = os.path.join(out_dir, f"{source.name}.asc")
        write_ascii_raster(
            path,
            cov.layer(source.name),
            origin=config.grid.origin,
            cellsize=config.grid.fine_cell_size,
            valid=config.grid.domain_mask,
        )
        paths.append(path)
    return paths


def sample_design(
    sampling: SamplingDesign,
    grid: GridSpec,
    species: list[str],
    rng: np.random.Generator,
) -> list[tuple[float, float, int, str]]:
    """Uniform design: locations over the mask, months over the window,
    species over the declared list."""
    points = []
    for _ in range(sampling.n_samples):
        x, y = grid.sample_point_in_mask(rng)
        date = int(rng.integers(sampling.first_month, sampling.last_month + 1))
        sp = species[int(rng.integers(0, len(species)))]
        points.append((x, y, date, sp))
    return points


def solve_truth(
    truth: ParameterState,
    covariates: CovariateRaster,
    z_layers: list[str],
    w_layers: list[str],
    t_end: int,
    steps_per_month: int,
    frame_stride_months: int = 1,
) -> IntensityTrajectory:
    rates = make_rate_fields(
        truth.alpha0, truth.alpha, truth.gamma0, truth.gamma,
        covariates, z_layers, w_layers,
    )
    return solve_homogenized(
        truth.events(), rates, t_end, steps_per_month, frame_stride_months
    )


def generate_dataset(
    config: RunConfig,
    rng: np.random.Generator,
    covariates: CovariateRaster | None = None,
) -> tuple[SampleSet, IntensityTrajectory]:
    """Draw one dataset under the configured truth.

    The design (where, when, which species) and the outcomes both come from
    ``rng``, so one generator draw per replicate yields an independent
    surveillance campaign over the same true invasion.
    """
    if config.experiment is None:
        raise ConfigurationError("config has no experiment section to simulate from")
    if covariates is None:
        covariates = build_covariates(config)
    exp = config.experiment
    trajectory = solve_truth(
        exp.truth, covariates, config.z_layers, config.w_layers,
        exp.sampling.last_month, config.steps_per_month,
    )
    points = sample_design(exp.sampling, config.grid, config.species, rng)
    design = SusceptibilityDesign(config.species)
    samples = simulate_samples(points, trajectory, exp.truth.beta, design, rng)
    return samples, trajectory


def truth_dict(config: RunConfig) -> dict:
    exp = config.experiment
    truth = exp.truth
    return {
        "alpha0": float(truth.alpha0),
        "alpha": {n: float(v) for n, v in zip(config.z_layers, truth.alpha)},
        "gamma0": float(truth.gamma0),
        "gamma": {n: float(v) for n, v in zip(config.w_layers, truth.gamma)},
        "beta": {s: float(v) for s, v in zip(config.species, truth.beta)},
        "omega": [[float(x), float(y)] for x, y in truth.omega],
        "t0": format_month(truth.t0),
        "theta": [float(v) for v in truth.theta],
        "sampling": {
            "n_samples": exp.sampling.n_samples,
            "first_month": format_month(exp.sampling.first_month),
            "last_month": format_month(exp.sampling.last_month),
        },
    }


def write_truth_json(path: str | os.PathLike, config: RunConfig) -> None:
    with open(path, "w") as f:
        json.dump(truth_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")
