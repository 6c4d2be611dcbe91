"""Run configuration: one YAML file per run, validated eagerly.

Sections: ``grid``, ``covariates``, ``model``, ``prior``, ``mcmc``,
``solver``, ``data``, ``forecast``, ``experiment``, plus a top-level
``seed``.  Relative paths are resolved against the config file's directory,
and every referenced file must exist at load time so bad runs die before
any compute starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import AlignmentError, ConfigurationError
from .grid import GridSpec, build_grid
from .mcmc import MCMCConfig, ParameterState, PriorSpec, ProposalScales
from .months import month_index
from .rasters import read_raster

SYNTHETIC_KINDS = ("smooth", "patchy")

_TOP_KEYS = {
    "grid", "covariates", "model", "prior", "mcmc", "solver", "data",
    "forecast", "experiment", "seed",
}


@dataclass(frozen=True)
class CovariateSource:
    """Where one covariate layer comes from: a raster file or a generator."""

    name: str
    path: str | None = None
    synthetic: str | None = None
    amplitude: float = 1.0


@dataclass(frozen=True)
class SamplingDesign:
    """How many samples to draw, over which months."""

    n_samples: int
    first_month: int
    last_month: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigurationError("sampling needs at least one sample")
        if self.last_month < self.first_month:
            raise ConfigurationError("sampling window is empty")


@dataclass(frozen=True)
class ExperimentSettings:
    """A simulation setting: fixed truth plus the per-replicate design."""

    name: str
    replicates: int
    truth: ParameterState
    sampling: SamplingDesign

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError("experiment needs at least one replicate")


@dataclass
class RunConfig:
    path: str
    seed: int
    grid: GridSpec
    covariates: list[CovariateSource]
    z_layers: list[str]
    w_layers: list[str]
    species: list[str]
    n_sources: int
    prior: PriorSpec
    mcmc: MCMCConfig
    steps_per_month: int
    frame_stride_months: int
    samples_path: str | None
    holdout_path: str | None
    reference_point: tuple[float, float] | None
    experiment: ExperimentSettings | None


def _section(doc: Mapping, key: str, required: bool = True) -> Mapping:
    value = doc.get(key)
    if value is None:
        if required:
            raise ConfigurationError(f"config is missing the {key!r} section")
        return {}
    if not isinstance(value, Mapping):
        raise ConfigurationError(f"section {key!r} must be a mapping")
    return value


def _get(section: Mapping, key: str, kind, where: str, default=None, required=False):
    value = section.get(key, default)
    if value is None:
        if required:
            raise ConfigurationError(f"{where}: missing {key!r}")
        return None
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"{where}: {key!r} must be {kind.__name__}, got {value!r}"
        ) from None


def _resolve(base_dir: str, path: str, what: str) -> str:
    resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(resolved):
        raise ConfigurationError(f"{what}: file not found: {resolved}")
    return resolved


def _coef_vector(section: Any, names: list[str], where: str) -> np.ndarray:
    """Coefficients keyed by layer or species name, in declared order."""
    if section is None:
        section = {}
    if not isinstance(section, Mapping):
        raise ConfigurationError(f"{where} must map names to numbers")
    unknown = sorted(set(section) - set(names))
    if unknown:
        raise ConfigurationError(f"{where}: unknown names {unknown}")
    return np.array([float(section.get(n, 0.0)) for n in names])


def _load_mask(path: str, extent, fine_km: float) -> np.ndarray:
    raster = read_raster(path)
    xmin, ymin, xmax, ymax = extent
    n_rows = int(round((ymax - ymin) / fine_km))
    n_cols = int(round((xmax - xmin) / fine_km))
    if raster.values.shape != (n_rows, n_cols):
        raise AlignmentError(
            f"mask raster is {raster.values.shape}, grid needs {(n_rows, n_cols)}"
        )
    if abs(raster.cellsize - fine_km) > 1e-6 * fine_km:
        raise AlignmentError("mask raster cell size does not match the fine grid")
    if abs(raster.origin[0] - xmin) > 1e-6 or abs(raster.origin[1] - ymin) > 1e-6:
        raise AlignmentError("mask raster corner does not match the grid extent")
    return raster.valid & (np.nan_to_num(raster.values) > 0.5)


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate one run configuration."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path}: not valid YAML: {e}") from None
    if not isinstance(doc, Mapping):
        raise ConfigurationError(f"{path}: config must be a mapping of sections")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ConfigurationError(f"{path}: unknown config sections {unknown}")
    base_dir = os.path.dirname(os.path.abspath(path))

    seed = _get(doc, "seed", int, path, default=0)
    if seed_override is not None:
        seed = int(seed_override)

    g = _section(doc, "grid")
    extent_raw = g.get("extent_km")
    if (
        not isinstance(extent_raw, (list, tuple))
        or len(extent_raw) != 4
    ):
        raise ConfigurationError("grid.extent_km must be [xmin, ymin, xmax, ymax]")
    extent = tuple(float(v) for v in extent_raw)
    fine_km = _get(g, "fine_cell_km", float, "grid", required=True)
    coarse_km = _get(g, "coarse_cell_km", float, "grid", required=True)
    mask = None
    if g.get("mask") is not None:
        mask_path = _resolve(base_dir, str(g["mask"]), "grid.mask")
        mask = _load_mask(mask_path, extent, fine_km)
    grid = build_grid(extent, fine_km, coarse_km, mask=mask)

    cov_section = _section(doc, "covariates", required=False)
    covariates: list[CovariateSource] = []
    for name, spec in cov_section.items():
        if isinstance(spec, str):
            covariates.append(
                CovariateSource(name=str(name), path=_resolve(base_dir, spec, f"covariates.{name}"))
            )
        elif isinstance(spec, Mapping):
            kind = spec.get("synthetic")
            if kind not in SYNTHETIC_KINDS:
                raise ConfigurationError(
                    f"covariates.{name}: synthetic must be one of {SYNTHETIC_KINDS}"
                )
            covariates.append(
                CovariateSource(
                    name=str(name),
                    synthetic=str(kind),
                    amplitude=_get(spec, "amplitude", float, f"covariates.{name}", default=1.0),
                )
            )
        else:
            raise ConfigurationError(
                f"covariates.{name}: expected a path or a synthetic spec"
            )
    cov_names = [c.name for c in covariates]

    m = _section(doc, "model")
    species = list(m.get("species") or [])
    if not species or len(set(species)) != len(species):
        raise ConfigurationError("model.species must be a nonempty list of unique names")
    z_layers = list(m.get("z_layers") or [])
    w_layers = list(m.get("w_layers") or [])
    for what, layers in (("z_layers", z_layers), ("w_layers", w_layers)):
        missing = sorted(set(layers) - set(cov_names))
        if missing:
            raise ConfigurationError(f"model.{what}: undeclared covariates {missing}")
    n_sources = _get(m, "n_sources", int, "model", default=1)

    p = _section(doc, "prior")
    window = p.get("t0_window")
    if not isinstance(window, (list, tuple)) or len(window) != 2:
        raise ConfigurationError('prior.t0_window must be ["YYYY-MM", "YYYY-MM"]')
    prior = PriorSpec(
        t0_min=month_index(str(window[0])),
        t0_max=month_index(str(window[1])),
        beta_sd=_get(p, "beta_sd", float, "prior", default=2.5),
        alpha_gamma_sd=_get(p, "alpha_gamma_sd", float, "prior", default=2.5),
        log_theta_mean=_get(p, "log_theta_mean", float, "prior", default=0.0),
        log_theta_sd=_get(p, "log_theta_sd", float, "prior", default=1.0),
    )

    s = _section(doc, "solver", required=False)
    steps_per_month = _get(s, "steps_per_month", int, "solver", default=30)
    frame_stride = _get(s, "frame_stride_months", int, "solver", default=1)
    if steps_per_month < 1 or frame_stride < 1:
        raise ConfigurationError("solver settings must be positive")

    mc = _section(doc, "mcmc", required=False)
    scales_doc = _section(mc, "proposal_scales", required=False) if mc else {}
    scales = ProposalScales(
        alpha=_get(scales_doc, "alpha", float, "mcmc.proposal_scales", default=0.1),
        gamma=_get(scales_doc, "gamma", float, "mcmc.proposal_scales", default=0.02),
        log_theta=_get(scales_doc, "log_theta", float, "mcmc.proposal_scales", default=0.3),
        omega_km=_get(scales_doc, "omega_km", float, "mcmc.proposal_scales", default=30.0),
        t0_months=_get(scales_doc, "t0_months", int, "mcmc.proposal_scales", default=3),
    )
    mcmc = MCMCConfig(
        n_chains=_get(mc, "n_chains", int, "mcmc", default=3),
        n_iterations=_get(mc, "n_iterations", int, "mcmc", default=5000),
        n_burnin=_get(mc, "n_burnin", int, "mcmc", default=1000),
        thin=_get(mc, "thin", int, "mcmc", default=1),
        adapt=bool(mc.get("adapt", True)),
        seed=seed,
        proposal_scales=scales,
        steps_per_month=steps_per_month,
        n_events=n_sources,
        n_starts=_get(mc, "n_starts", int, "mcmc", default=1),
        pilot_iterations=_get(mc, "pilot_iterations", int, "mcmc", default=200),
    )

    d = _section(doc, "data", required=False)
    samples_path = (
        _resolve(base_dir, str(d["samples"]), "data.samples") if d.get("samples") else None
    )

    fc = _section(doc, "forecast", required=False)
    holdout_path = (
        _resolve(base_dir, str(fc["holdout"]), "forecast.holdout") if fc.get("holdout") else None
    )
    reference_point = None
    if fc.get("reference_point") is not None:
        ref = fc["reference_point"]
        if not isinstance(ref, (list, tuple)) or len(ref) != 2:
            raise ConfigurationError("forecast.reference_point must be [x_km, y_km]")
        reference_point = (float(ref[0]), float(ref[1]))
        if not grid.contains(*reference_point):
            raise ConfigurationError("forecast.reference_point lies outside the mask")

    experiment = None
    e = _section(doc, "experiment", required=False)
    if e:
        experiment = _load_experiment(e, grid, prior, species, z_layers, w_layers, n_sources)

    return RunConfig(
        path=os.path.abspath(path),
        seed=seed,
        grid=grid,
        covariates=covariates,
        z_layers=z_layers,
        w_layers=w_layers,
        species=species,
        n_sources=n_sources,
        prior=prior,
        mcmc=mcmc,
        steps_per_month=steps_per_month,
        frame_stride_months=frame_stride,
        samples_path=samples_path,
        holdout_path=holdout_path,
        reference_point=reference_point,
        experiment=experiment,
    )


def _load_experiment(
    e: Mapping,
    grid: GridSpec,
    prior: PriorSpec,
    species: list[str],
    z_layers: list[str],
    w_layers: list[str],
    n_sources: int,
) -> ExperimentSettings:
    t = _section(e, "truth")
    omega_raw = t.get("omega")
    if not isinstance(omega_raw, (list, tuple)) or not omega_raw:
        raise ConfigurationError("experiment.truth.omega must be a list of [x, y] pairs")
    omega = np.array([[float(v) for v in pair] for pair in omega_raw], dtype=float)
    if omega.shape != (n_sources, 2):
        raise ConfigurationError(
            f"experiment.truth.omega needs {n_sources} [x, y] pair(s)"
        )
    for x, y in omega:
        if not grid.contains(x, y):
            raise ConfigurationError(
                f"experiment.truth.omega ({x}, {y}) lies outside the mask"
            )
    theta_raw = t.get("theta")
    if isinstance(theta_raw, (int, float)):
        theta_raw = [theta_raw]
    if not isinstance(theta_raw, (list, tuple)) or len(theta_raw) != n_sources:
        raise ConfigurationError(f"experiment.truth.theta needs {n_sources} value(s)")
    t0 = month_index(str(_get(t, "t0", str, "experiment.truth", required=True)))
    if not prior.t0_min <= t0 <= prior.t0_max:
        raise ConfigurationError(
            "experiment.truth.t0 must lie inside prior.t0_window"
        )
    truth = ParameterState(
        beta=_coef_vector(t.get("beta"), species, "experiment.truth.beta"),
        alpha0=_get(t, "alpha0", float, "experiment.truth", default=0.0),
        alpha=_coef_vector(t.get("alpha"), z_layers, "experiment.truth.alpha"),
        gamma0=_get(t, "gamma0", float, "experiment.truth", default=0.0),
        gamma=_coef_vector(t.get("gamma"), w_layers, "experiment.truth.gamma"),
        omega=omega,
        t0=t0,
        theta=np.array([float(v) for v in theta_raw]),
    )
    sampling_doc = _section(e, "sampling")
    sampling = SamplingDesign(
        n_samples=_get(sampling_doc, "n_samples", int, "experiment.sampling", required=True),
        first_month=month_index(
            str(_get(sampling_doc, "first_month", str, "experiment.sampling", required=True))
        ),
        last_month=month_index(
            str(_get(sampling_doc, "last_month", str, "experiment.sampling", required=True))
        ),
    )
    if sampling.first_month <= prior.t0_max:
        raise ConfigurationError(
            "experiment.sampling must start after the introduction window ends"
        )
    return ExperimentSettings(
        name=str(e.get("name", "setting")),
        replicates=_get(e, "replicates", int, "experiment", default=20),
        truth=truth,
        sampling=sampling,
    )
