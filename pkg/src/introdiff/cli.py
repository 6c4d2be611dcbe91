"""Batch command-line front end.

Subcommands: ``simulate``, ``fit``, ``summarize``, ``forecast``,
``experiment``, ``validate-config``.  Every command is a pure function of
its config, inputs, and seed; exit code 0 on success, 2 for configuration
problems, 1 for runtime failures (with the failing stage named).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_config
from .errors import ConfigurationError, IntrodiffError
from .experiment import run_experiment, write_experiment_report
from .mcmc import read_chains_csv
from .observation import SusceptibilityDesign, read_samples_csv, write_samples_csv
from .pipeline import StageFailure, _forecast_and_score, pipeline_fit
from .posterior import (
    hpd_region,
    location_posterior_map,
    posterior_rate_maps,
    summarize_marginals,
    write_probability_raster,
    write_region_raster,
    write_summary_csv,
    write_year_pmf_csv,
)
from .simulate import build_covariates, export_covariates, generate_dataset, dataset_rng, write_truth_json


def _add_common(p: argparse.ArgumentParser, out_dir: bool = True) -> None:
    p.add_argument("config", help="run configuration (YAML)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    if out_dir:
        p.add_argument("--out-dir", default="out", help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="introdiff",
        description="Infer the origin of a spreading pathogen from surveillance data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known truth")
    _add_common(p)
    p.add_argument("--replicate", type=int, default=0, help="replicate index (default 0)")
    p.add_argument("--export-frames", action="store_true", help="also write monthly intensity rasters")

    p = sub.add_parser("fit", help="fit the model and write chains, summaries, maps")
    _add_common(p)
    p.add_argument("--threads", type=int, default=1, help="parallel chains (default 1)")

    p = sub.add_parser("summarize", help="summaries and maps from an existing chain file")
    _add_common(p)
    p.add_argument("--chains", required=True, help="chain CSV written by fit")

    p = sub.add_parser("forecast", help="forecast a holdout design from an existing chain file")
    _add_common(p)
    p.add_argument("--chains", required=True, help="chain CSV written by fit")
    p.add_argument("--holdout", default=None, help="holdout sample CSV (default: config forecast.holdout)")

    p = sub.add_parser("experiment", help="run the bias/coverage simulation experiment")
    p.add_argument("configs", nargs="+", help="one config per simulation setting")
    p.add_argument("--seed", type=int, default=None, help="override every config seed")
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="parallel replicates (default 1)")

    p = sub.add_parser("validate-config", help="load and check a config, then exit")
    p.add_argument("config", help="run configuration (YAML)")

    return parser


def _cmd_simulate(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    if config.experiment is None:
        raise ConfigurationError("config has no experiment section to simulate from")
    os.makedirs(args.out_dir, exist_ok=True)
    covariates = build_covariates(config)
    samples, trajectory = generate_dataset(
        config, dataset_rng(config.seed, args.replicate), covariates
    )
    write_samples_csv(os.path.join(args.out_dir, "samples.csv"), samples)
    write_truth_json(os.path.join(args.out_dir, "truth.json"), config)
    export_covariates(config, covariates, os.path.join(args.out_dir, "covariates"))
    if args.export_frames:
        trajectory.export(os.path.join(args.out_dir, "frames"))
    print(
        f"simulated {len(samples)} samples ({int(samples.y.sum())} positive) "
        f"into {args.out_dir}"
    )
    return 0


def _cmd_fit(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    report_path = pipeline_fit(config, args.out_dir, threads=args.threads)
    print(f"fit complete; report at {report_path}")
    return 0


def _cmd_summarize(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    chains = read_chains_csv(args.chains)
    os.makedirs(args.out_dir, exist_ok=True)
    covariates = build_covariates(config)
    summary = summarize_marginals(chains, 0.90)
    write_summary_csv(os.path.join(args.out_dir, "marginals.csv"), summary)
    write_year_pmf_csv(os.path.join(args.out_dir, "year_pmf.csv"), summary)
    prob_map = location_posterior_map(chains, config.grid)
    write_probability_raster(
        os.path.join(args.out_dir, "location_posterior.asc"), prob_map, config.grid
    )
    region = hpd_region(prob_map, 0.90, grid=config.grid)
    write_region_raster(os.path.join(args.out_dir, "hpd_region_90.asc"), region, config.grid)
    mu_map, lam_map = posterior_rate_maps(chains, covariates, config.z_layers, config.w_layers)
    write_probability_raster(os.path.join(args.out_dir, "mu_mean.asc"), mu_map, config.grid)
    write_probability_raster(os.path.join(args.out_dir, "lambda_mean.asc"), lam_map, config.grid)
    print(f"summaries written to {args.out_dir}")
    return 0


def _cmd_forecast(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    chains = read_chains_csv(args.chains)
    holdout_path = args.holdout or config.holdout_path
    if holdout_path is None:
        raise ConfigurationError("no holdout file: pass --holdout or set forecast.holdout")
    if config.samples_path is None:
        raise ConfigurationError("config needs data.samples for the baseline comparison")
    holdout = read_samples_csv(holdout_path)
    train = read_samples_csv(config.samples_path)
    covariates = build_covariates(config)
    os.makedirs(args.out_dir, exist_ok=True)
    lines = _forecast_and_score(config, covariates, chains, train, holdout, args.out_dir)
    for line in lines:
        print(line)
    return 0


def _cmd_experiment(args) -> int:
    configs = [load_config(path, seed_override=args.seed) for path in args.configs]
    report = run_experiment(configs, threads=args.threads)
    write_experiment_report(args.out_dir, report)
    print(report.format())
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    # fail-fast checks that need the data files, before any compute
    if config.samples_path is not None:
        samples = read_samples_csv(config.samples_path)
        samples.validate_on(config.grid)
        SusceptibilityDesign(config.species).encode_many(samples.species.tolist())
        if config.prior.t0_max >= int(samples.date.min()):
            raise ConfigurationError(
                "prior.t0_window must end before the first sample date"
            )
    if config.holdout_path is not None:
        read_samples_csv(config.holdout_path)
    print(f"{os.path.basename(config.path)}: ok")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "summarize": _cmd_summarize,
    "forecast": _cmd_forecast,
    "experiment": _cmd_experiment,
    "validate-config": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigurationError as e:
        print(f"error: stage 'configuration': {e}", file=sys.stderr)
        return 2
    except IntrodiffError as e:
        print(f"error: stage {args.command!r}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
