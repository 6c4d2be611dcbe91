"""Infer the date and location of a pathogen introduction from
presence/absence surveillance records.

The model couples an ecological-diffusion PDE for pathogen intensity
(solved by homogenization on a coarse grid) with a Bernoulli observation
layer, and fits the joint posterior over the introduction point, month,
mass, and spread dynamics by Metropolis-within-Gibbs.
"""

from .config import ExperimentSettings, RunConfig, SamplingDesign, load_config
from .diagnostics import ChainDiagnostics, chain_diagnostics, ess, split_rhat
from .errors import (
    AlignmentError,
    ConfigurationError,
    CoverageError,
    DomainError,
    IntrodiffError,
    NumericalBlowupError,
    RasterParseError,
)
from .experiment import ExperimentReport, run_experiment, run_replicate
from .glm import GlmFit, fit_logistic, glm_baseline, glm_design
from .grid import CovariateRaster, GridSpec, HomogenizedField, build_grid, homogenize
from .mcmc import (
    ChainOutput,
    GibbsSampler,
    MCMCConfig,
    ParameterState,
    PriorSpec,
    ProposalScales,
    draw_from_prior,
    read_chains_csv,
    run_mcmc,
    states_from_chains,
    write_chains_csv,
)
from .months import format_month, month_index, year_of
from .observation import (
    SampleRecord,
    SampleSet,
    SusceptibilityDesign,
    infection_probability,
    inverse_link,
    log_likelihood,
    read_samples_csv,
    simulate_samples,
    write_samples_csv,
)
from .pipeline import StageFailure, pipeline_fit
from .posterior import (
    CredibleRegion,
    ForecastResult,
    PosteriorSummary,
    exceedance_region,
    forecast,
    hpd_region,
    location_posterior_map,
    misclassification_rate,
    posterior_rate_maps,
    summarize_marginals,
)
from .rasters import read_ascii_raster, read_raster, write_ascii_raster
from .simulate import build_covariates, generate_dataset, synthetic_layer
from .solver import (
    IntensityTrajectory,
    IntroductionEvent,
    RateFields,
    diffusion_field,
    growth_field,
    initialize_intensity,
    integrate_intensity,
    make_rate_fields,
    solve_fine_oracle,
    solve_homogenized,
)

__version__ = "0.1.0"
