"""Posterior products: marginal summaries, location maps, credible regions,
rate surfaces, and forward forecasts.

Credible regions are built on the fine-cell histogram of location draws, so
areas are exact cell counts times the fine-cell area and region membership
is reproducible (ties broken by row-major cell order).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError, NumericalBlowupError
from .grid import CovariateRaster, GridSpec
from .mcmc import ChainOutput, ParameterState, states_from_chains
from .months import format_month, year_of
from .observation import INTENSITY_FLOOR, PROB_CLAMP, SusceptibilityDesign
from .rasters import write_ascii_raster
from .solver import make_rate_fields, solve_homogenized


@dataclass
class PosteriorSummary:
    """Equal-tailed interval summaries plus the introduction-year pmf."""

    level: float
    table: dict[str, tuple[float, float, float, float]]  # mean, median, lo, hi
    year_pmf: dict[int, float]

    def row(self, name: str) -> tuple[float, float, float, float]:
        return self.table[name]


@dataclass
class CredibleRegion:
    """A set of fine cells with its attained posterior mass and area."""

    cells: np.ndarray
    level: float
    area_km2: float
    requested_level: float | None = None
    farthest_km: float | None = None
    farthest_bearing_deg: float | None = None

    @property
    def n_cells(self) -> int:
        return int(self.cells.sum())


def _pooled(chains: Sequence[ChainOutput], name: str) -> np.ndarray:
    return np.concatenate([c.column(name) for c in chains])


def summarize_marginals(chains: Sequence[ChainOutput], level: float = 0.90) -> PosteriorSummary:
    """Mean, median, and equal-tailed interval for every chain column."""
    if not chains:
        raise ConfigurationError("no chains to summarize")
    n = sum(len(c.draws) for c in chains)
    if n < 100:
        raise ConfigurationError(f"need at least 100 retained draws, have {n}")
    if not 0.0 < level < 1.0:
        raise ConfigurationError("interval level must lie in (0, 1)")
    lo_q, hi_q = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    table = {}
    for name in chains[0].names:
        draws = _pooled(chains, name)
        lo, med, hi = np.quantile(draws, [lo_q, 0.5, hi_q])
        table[name] = (float(draws.mean()), float(med), float(lo), float(hi))
    t0_draws = _pooled(chains, "t0").astype(int)
    years = np.array([year_of(t) for t in t0_draws])
    pmf: dict[int, float] = {}
    for year in np.unique(years):
        pmf[int(year)] = float((years == year).mean())
    return PosteriorSummary(level=level, table=table, year_pmf=pmf)


def _omega_columns(chains: Sequence[ChainOutput], source: int | None) -> list[tuple[str, str]]:
    names = chains[0].names
    if "omega_x" in names:
        return [("omega_x", "omega_y")]
    pairs = []
    j = 1
    while f"omega_x_{j}" in names:
        pairs.append((f"omega_x_{j}", f"omega_y_{j}"))
        j += 1
    if source is not None:
        if not 1 <= source <= len(pairs):
            raise ConfigurationError(f"no introduction source {source}")
        return [pairs[source - 1]]
    return pairs


def location_posterior_map(
    chains: Sequence[ChainOutput], grid: GridSpec, source: int | None = None
) -> np.ndarray:
    """Histogram of location draws on fine cells, normalized to total mass 1.

    With several sources the draws are pooled unless ``source`` picks one.
    """
    if not chains:
        raise ConfigurationError("no chains")
    counts = np.zeros((grid.n_fine_rows, grid.n_fine_cols))
    total = 0
    for x_name, y_name in _omega_columns(chains, source):
        xs = _pooled(chains, x_name)
        ys = _pooled(chains, y_name)
        rows, cols = grid.fine_indices_of(xs, ys)
        if not grid.domain_mask[rows, cols].all():
            raise DomainError("location draw outside the domain mask")
        np.add.at(counts, (rows, cols), 1.0)
        total += len(xs)
    if total == 0:
        raise ConfigurationError("chains contain no location draws")
    return counts / total


def hpd_region(prob_map: np.ndarray, level: float = 0.90, grid: GridSpec | None = None,
               cell_area: float | None = None) -> CredibleRegion:
    """Smallest cell set reaching the level, filled in decreasing mass order."""
    if not 0.0 < level < 1.0:
        raise ConfigurationError("region level must lie in (0, 1)")
    total = prob_map.sum()
    if not math.isclose(total, 1.0, abs_tol=1e-6):
        raise ConfigurationError(f"probability map sums to {total}, expected 1")
    if cell_area is None:
        cell_area = grid.fine_cell_area if grid is not None else 1.0
    flat = prob_map.ravel()
    # stable sort on negated mass keeps row-major order within ties
    order = np.argsort(-flat, kind="stable")
    csum = np.cumsum(flat[order])
    n_take = int(np.searchsorted(csum, level - 1e-12)) + 1
    n_take = min(n_take, len(flat))
    cells = np.zeros(flat.shape, dtype=bool)
    cells[order[:n_take]] = True
    return CredibleRegion(
        cells=cells.reshape(prob_map.shape),
        level=float(csum[n_take - 1]),
        area_km2=float(n_take * cell_area),
        requested_level=level,
    )


def exceedance_region(
    prob_map: np.ndarray, reference: tuple[float, float], grid: GridSpec
) -> CredibleRegion:
    """Cells at least as probable as the one containing the reference point.

    Also reports how far the region reaches: planar distance and bearing
    (degrees clockwise from north) from the reference to the farthest
    member cell center.
    """
    x_ref, y_ref = reference
    if not grid.contains(x_ref, y_ref):
        raise DomainError(f"reference point ({x_ref}, {y_ref}) outside the domain mask")
    r_ref, c_ref = grid.fine_index(x_ref, y_ref)
    ref_mass = prob_map[r_ref, c_ref]
    if ref_mass > 0:
        cells = prob_map >= ref_mass
    else:
        cells = prob_map > 0
    rows, cols = np.nonzero(cells)
    centers_x = np.empty(len(rows))
    centers_y = np.empty(len(rows))
    for i, (r, c) in enumerate(zip(rows, cols)):
        centers_x[i], centers_y[i] = grid.fine_center(r, c)
    dx = centers_x - x_ref
    dy = centers_y - y_ref
    dist = np.hypot(dx, dy)
    far = int(np.argmax(dist))
    bearing = math.degrees(math.atan2(dx[far], dy[far])) % 360.0
    return CredibleRegion(
        cells=cells,
        level=float(prob_map[cells].sum()),
        area_km2=float(cells.sum() * grid.fine_cell_area),
        farthest_km=float(dist[far]),
        farthest_bearing_deg=bearing,
    )


def posterior_rate_maps(
    chains: Sequence[ChainOutput],
    covariates: CovariateRaster,
    z_layers: Sequence[str] | None = None,
    w_layers: Sequence[str] | None = None,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean diffusion and growth surfaces on the fine grid."""
    if not chains:
        raise ConfigurationError("no chains")
    z_layers = chains[0].z_layers if z_layers is None else list(z_layers)
    w_layers = chains[0].w_layers if w_layers is None else list(w_layers)
    grid = covariates.grid
    n_cells = grid.n_fine_rows * grid.n_fine_cols
    Z = covariates.stack(z_layers).reshape(len(z_layers), n_cells)
    W = covariates.stack(w_layers).reshape(len(w_layers), n_cells)
    a0 = _pooled(chains, "alpha0")
    g0 = _pooled(chains, "gamma0")
    A = (
        np.stack([_pooled(chains, f"alpha_{n}") for n in z_layers], axis=1)
        if z_layers
        else np.zeros((len(a0), 0))
    )
    G = (
        np.stack([_pooled(chains, f"gamma_{n}") for n in w_layers], axis=1)
        if w_layers
        else np.zeros((len(g0), 0))
    )
    n = len(a0)
    mu_sum = np.zeros(grid.n_fine_rows * grid.n_fine_cols)
    lam_sum = np.zeros_like(mu_sum)
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        mu_sum += np.exp(a0[start:end, None] + A[start:end] @ Z).sum(axis=0)
        lam_sum += (g0[start:end, None] + G[start:end] @ W).sum(axis=0)
    shape = (grid.n_fine_rows, grid.n_fine_cols)
    mu_map = np.where(grid.domain_mask, (mu_sum / n).reshape(shape), 0.0)
    lam_map = np.where(grid.domain_mask, (lam_sum / n).reshape(shape), 0.0)
    return mu_map, lam_map


@dataclass
class ForecastResult:
    """Posterior-mean positive probabilities for a holdout design."""

    x_km: np.ndarray
    y_km: np.ndarray
    date: np.ndarray
    species: np.ndarray
    p_mean: np.ndarray
    label: np.ndarray
    errors: dict[int, str] = field(default_factory=dict)
    n_draws: int = 0
    n_failed_draws: int = 0

    def __len__(self) -> int:
        return len(self.p_mean)

    def valid(self) -> np.ndarray:
        ok = np.ones(len(self), dtype=bool)
        for i in self.errors:
            ok[i] = False
        return ok


def _thin_indices(n: int, target: int) -> np.ndarray:
    if n <= target:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, target).round().astype(int))


def forecast(
    chains: Sequence[ChainOutput],
    holdout_design: Sequence[tuple[float, float, int, str]],
    covariates: CovariateRaster,
    design: SusceptibilityDesign | None = None,
    z_layers: Sequence[str] | None = None,
    w_layers: Sequence[str] | None = None,
    steps_per_month: int = 30,
    min_draws: int = 500,
) -> ForecastResult:
    """Average each holdout record's positive probability over retained draws.

    Every selected draw is solved forward to the last holdout month.  Draws
    whose extended solve blows up are skipped and counted.  Records outside
    the mask or with unknown species get an error entry instead of a value.
    """
    if not chains:
        raise ConfigurationError("no chains")
    if not holdout_design:
        raise ConfigurationError("empty holdout design")
    grid = covariates.grid
    z_layers = chains[0].z_layers if z_layers is None else list(z_layers)
    w_layers = chains[0].w_layers if w_layers is None else list(w_layers)
    if design is None:
        design = SusceptibilityDesign(chains[0].species)

    xs = np.array([d[0] for d in holdout_design], dtype=float)
    ys = np.array([d[1] for d in holdout_design], dtype=float)
    dates = np.array([d[2] for d in holdout_design], dtype=int)
    species = np.array([d[3] for d in holdout_design], dtype=object)

    errors: dict[int, str] = {}
    for i in range(len(xs)):
        if not grid.contains(xs[i], ys[i]):
            errors[i] = "location outside the domain mask"
        elif species[i] not in design.species_order:
            errors[i] = f"unknown species {species[i]!r}"
    ok = np.array([i not in errors for i in range(len(xs))])

    p_mean = np.full(len(xs), np.nan)
    label = np.full(len(xs), -1, dtype=int)
    states = states_from_chains(chains)
    idx = _thin_indices(len(states), max(min_draws, 1))
    n_failed = 0
    if ok.any():
        rows, cols = grid.fine_indices_of(xs[ok], ys[ok])
        X = design.encode_many(list(species[ok]))
        t_end = int(dates[ok].max())
        acc = np.zeros(int(ok.sum()))
        used = 0
        for k in idx:
            state = states[k]
            try:
                p = _state_probabilities(
                    state, rows, cols, dates[ok], X, covariates,
                    z_layers, w_layers, t_end, steps_per_month,
                )
            except (NumericalBlowupError, DomainError):
                n_failed += 1
                continue
            acc += p
            used += 1
        if used == 0:
            raise ConfigurationError("every selected draw failed to solve forward")
        p_mean[ok] = acc / used
        label[ok] = (p_mean[ok] >= 0.5).astype(int)  # ties classified positive
    return ForecastResult(
        x_km=xs, y_km=ys, date=dates, species=species,
        p_mean=p_mean, label=label, errors=errors,
        n_draws=len(idx), n_failed_draws=n_failed,
    )


def _state_probabilities(
    state: ParameterState,
    rows: np.ndarray,
    cols: np.ndarray,
    dates: np.ndarray,
    X: np.ndarray,
    covariates: CovariateRaster,
    z_layers: Sequence[str],
    w_layers: Sequence[str],
    t_end: int,
    steps_per_month: int,
) -> np.ndarray:
    if t_end < state.t0:
        u = np.zeros(len(rows))
    else:
        rates = make_rate_fields(
            state.alpha0, state.alpha, state.gamma0, state.gamma,
            covariates, z_layers, w_layers,
        )
        traj = solve_homogenized(state.events(), rates, t_end, steps_per_month)
        u = traj.u_at(rows, cols, dates)
    shift = X @ state.beta
    with np.errstate(divide="ignore"):
        p = ndtr(np.log(np.maximum(u, INTENSITY_FLOOR)) + shift)
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def misclassification_rate(result: ForecastResult, truth: Sequence[int]) -> float:
    """Fraction of forecast labels disagreeing with the true outcomes."""
    truth = np.asarray(truth, dtype=int)
    if len(truth) != len(result):
        raise ConfigurationError(
            f"{len(result)} forecasts but {len(truth)} true labels"
        )
    if result.errors:
        raise ConfigurationError(
            f"{len(result.errors)} forecast records carry errors; cannot score"
        )
    return float((result.label != truth).mean())


# -- file output ------------------------------------------------------------


def write_summary_csv(path: str | os.PathLike, summary: PosteriorSummary) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["parameter", "mean", "median", "ci_lo", "ci_hi", "level"])
        for name, (mean, med, lo, hi) in summary.table.items():
            w.writerow([name] + [repr(v) for v in (mean, med, lo, hi)] + [repr(summary.level)])


def write_year_pmf_csv(path: str | os.PathLike, summary: PosteriorSummary) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["year", "probability"])
        for year in sorted(summary.year_pmf):
            w.writerow([year, repr(summary.year_pmf[year])])


def write_region_raster(path: str | os.PathLike, region: CredibleRegion, grid: GridSpec) -> None:
    write_ascii_raster(
        path,
        region.cells.astype(float),
        origin=grid.origin,
        cellsize=grid.fine_cell_size,
    )


def write_probability_raster(path: str | os.PathLike, prob_map: np.ndarray, grid: GridSpec) -> None:
    write_ascii_raster(
        path, prob_map, origin=grid.origin, cellsize=grid.fine_cell_size
    )


def write_forecast_csv(path: str | os.PathLike, result: ForecastResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x_km", "y_km", "date", "species", "p_mean", "label"])
        for i in range(len(result)):
            if i in result.errors:
                p_txt, l_txt = "", ""
            else:
                p_txt, l_txt = repr(float(result.p_mean[i])), str(int(result.label[i]))
            w.writerow(
                [
                    repr(float(result.x_km[i])),
                    repr(float(result.y_km[i])),
                    format_month(int(result.date[i])),
                    result.species[i],
                    p_txt,
                    l_txt,
                ]
            )
