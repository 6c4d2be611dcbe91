"""Forward solves of the diffusion-with-growth dynamics from point sources.

The production path steps the upscaled field ``c = mu * u`` on the coarse
grid and recovers fine-scale structure on demand by ``u = c / mu``; a direct
fine-grid solver of ``du/dt = lap(mu u) + lam u`` serves as an independent
check on small grids.  Both use explicit forward Euler with Dirichlet zeros
on out-of-mask and border cells, and halve the time step automatically until
the explicit-scheme stability bound holds.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError, NumericalBlowupError
from .grid import CovariateRaster, GridSpec, HomogenizedField, homogenize
from .months import format_month
from .rasters import write_ascii_raster

# hard ceiling on total explicit steps per solve; reached only under extreme
# proposed rates, in which case the solve is reported as a blowup
MAX_TOTAL_STEPS = 2_000_000

# growth beyond exp(700) overflows float64 no matter how fine the stepping
MAX_LOG_GROWTH = 700.0


def diffusion_field(
    alpha0: float,
    alpha: np.ndarray,
    covariates: CovariateRaster,
    layers: Sequence[str],
) -> np.ndarray:
    """Per-fine-cell diffusion rate ``exp(alpha0 + z' alpha)`` (km^2/month)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if len(alpha) != len(layers):
        raise ConfigurationError(
            f"{len(alpha)} diffusion coefficients for {len(layers)} layers"
        )
    grid = covariates.grid
    lin = np.full((grid.n_fine_rows, grid.n_fine_cols), float(alpha0))
    for coef, name in zip(alpha, layers):
        lin = lin + coef * covariates.layer(name)
    with np.errstate(over="ignore"):
        return np.exp(lin)


def growth_field(
    gamma0: float,
    gamma: np.ndarray,
    covariates: CovariateRaster,
    layers: Sequence[str],
) -> np.ndarray:
    """Per-fine-cell growth rate ``gamma0 + w' gamma`` (1/month, any sign)."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if len(gamma) != len(layers):
        raise ConfigurationError(
            f"{len(gamma)} growth coefficients for {len(layers)} layers"
        )
    grid = covariates.grid
    lin = np.full((grid.n_fine_rows, grid.n_fine_cols), float(gamma0))
    for coef, name in zip(gamma, layers):
        lin = lin + coef * covariates.layer(name)
    return lin


@dataclass(frozen=True)
class RateFields:
    """Fine-scale rate fields plus their coarse-grid upscaling."""

    grid: GridSpec
    mu: np.ndarray
    lam: np.ndarray
    homogenized: HomogenizedField


def make_rate_fields(
    alpha0: float,
    alpha: np.ndarray,
    gamma0: float,
    gamma: np.ndarray,
    covariates: CovariateRaster,
    z_layers: Sequence[str],
    w_layers: Sequence[str],
) -> RateFields:
    """Evaluate both regressions and upscale them."""
    mu = diffusion_field(alpha0, alpha, covariates, z_layers)
    lam = growth_field(gamma0, gamma, covariates, w_layers)
    hom = homogenize(mu, lam, covariates.grid)
    return RateFields(grid=covariates.grid, mu=mu, lam=lam, homogenized=hom)


@dataclass(frozen=True)
class IntroductionEvent:
    """A point-source introduction: location (km), month, initial mass."""

    omega: tuple[float, float]
    t0: int
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise DomainError(f"initial mass must be positive, got {self.theta}")


@dataclass
class IntensityTrajectory:
    """Saved solution frames on a monthly cadence starting at ``t0``.

    ``frames`` hold the coarse scaled field when ``on_fine_grid`` is False
    (the production solver) and the fine intensity itself when True (the
    direct solver); :meth:`fine_frame` returns fine intensity either way.
    """

    grid: GridSpec
    rates: RateFields
    t0: int
    frames: np.ndarray
    on_fine_grid: bool
    frame_stride_months: int = 1
    dt: float = field(default=0.0)
    steps_per_month: int = field(default=0)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def t_end(self) -> int:
        return self.t0 + (self.n_frames - 1) * self.frame_stride_months

    @property
    def frame_months(self) -> np.ndarray:
        return self.t0 + self.frame_stride_months * np.arange(self.n_frames)

    def fine_frame(self, i: int) -> np.ndarray:
        if self.on_fine_grid:
            return self.frames[i]
        return downscale_intensity(self.frames[i], self.rates)

    def u_at(self, rows: np.ndarray, cols: np.ndarray, dates: np.ndarray) -> np.ndarray:
        """Intensity at fine cells (rows, cols) on the nearest saved frame.

        Dates before ``t0`` yield zero (nothing had been introduced); dates
        after the last frame raise :class:`CoverageError`.
        """
        from .errors import CoverageError

        rows = np.atleast_1d(np.asarray(rows))
        cols = np.atleast_1d(np.asarray(cols))
        dates = np.atleast_1d(np.asarray(dates, dtype=float))
        if (dates > self.t_end).any():
            raise CoverageError(
                f"sample date {format_month(int(dates.max()))} beyond trajectory "
                f"end {format_month(self.t_end)}"
            )
        out = np.zeros(len(rows))
        live = dates >= self.t0
        if live.any():
            idx = np.rint((dates[live] - self.t0) / self.frame_stride_months).astype(int)
            r, c = rows[live], cols[live]
            if self.on_fine_grid:
                vals = self.frames[idx, r, c]
            else:
                ratio = self.grid.ratio
                vals = self.frames[idx, r // ratio, c // ratio] / self.rates.mu[r, c]
            vals = np.where(self.grid.domain_mask[r, c], vals, 0.0)
            out[live] = vals
        return out

    def export(self, out_dir: str | os.PathLike, nodata: float = -9999.0) -> list[str]:
        """Write one fine-intensity raster per frame as ``u_<YYYY-MM>.asc``."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for i, month in enumerate(self.frame_months):
            u = self.fine_frame(i)
            path = os.path.join(out_dir, f"u_{format_month(month)}.asc")
            write_ascii_raster(
                path,
                u,
                origin=self.grid.origin,
                cellsize=self.grid.fine_cell_size,
                nodata=nodata,
                valid=self.grid.domain_mask,
            )
            paths.append(path)
        return paths


def initialize_intensity(
    events: Sequence[IntroductionEvent], rates: RateFields, grid: GridSpec
) -> np.ndarray:
    """Seed the coarse scaled field so each event's downscaled mass is theta.

    The containing coarse cell receives ``theta * mu_bar / A`` where ``A`` is
    the masked area of that cell; integrating ``u = c / mu`` over the cell
    then returns exactly ``theta``.
    """
    if not events:
        raise DomainError("no introduction events")
    t0 = events[0].t0
    if any(e.t0 != t0 for e in events):
        raise DomainError("all introduction events must share the same month")
    hom = rates.homogenized
    cbar = np.zeros((grid.n_coarse_rows, grid.n_coarse_cols))
    for e in events:
        x, y = e.omega
        if not grid.contains(x, y):
            raise DomainError(f"introduction location ({x}, {y}) outside the study area")
        rc, cc = grid.coarse_index(x, y)
        area = grid.coarse_cell_counts[rc, cc] * grid.fine_cell_area
        cbar[rc, cc] += e.theta * hom.mu_bar[rc, cc] / area
    return cbar


def _stable_steps_per_month(
    steps_per_month: int, spacing: float, mu_max: float, lam_min: float, n_months: int
) -> int:
    """Smallest power-of-two multiple of ``steps_per_month`` that is stable.

    The explicit scheme needs ``dt <= H^2 / (4 max mu)``; with decaying cells
    the positivity requirement tightens to ``dt (4 mu / H^2 + max(0,-lam)) <= 1``.
    """
    if not np.isfinite(mu_max) or not np.isfinite(lam_min):
        raise NumericalBlowupError(0, "non-finite rate field")
    rate = 4.0 * mu_max / spacing**2 + max(0.0, -lam_min)
    spm = int(steps_per_month)
    while spm < rate:  # dt = 1/spm must satisfy dt * rate <= 1
        spm *= 2
        if n_months * spm > MAX_TOTAL_STEPS:
            raise NumericalBlowupError(
                0, f"stability requires more than {MAX_TOTAL_STEPS} steps"
            )
    if n_months * spm > MAX_TOTAL_STEPS:
        raise NumericalBlowupError(
            0, f"solve would need {n_months * spm} steps (cap {MAX_TOTAL_STEPS})"
        )
    return spm


def solve_homogenized(
    events: Sequence[IntroductionEvent],
    rates: RateFields,
    t_end: int,
    steps_per_month: int = 30,
    frame_stride_months: int = 1,
) -> IntensityTrajectory:
    """Step the upscaled dynamics from the seeded coarse state to ``t_end``.

    Saves one coarse frame per ``frame_stride_months``; the time step is
    halved automatically until stable, and a non-finite state raises
    :class:`NumericalBlowupError` naming the step.
    """
    grid = rates.grid
    t0 = int(round(events[0].t0))
    n_months = int(t_end) - t0
    if n_months < 0:
        raise ConfigurationError(f"t_end {t_end} precedes introduction month {t0}")
    cbar0 = initialize_intensity(events, rates, grid)

    hom = rates.homogenized
    active = grid.coarse_interior
    if not active.any():
        # happens when the coarse grid is 2 cells or fewer per axis
        raise DomainError(
            "no interior coarse cell: the absorbing boundary covers the whole "
            "coarse grid"
        )
    mu_max = float(hom.mu_bar[active].max())
    lam_act = hom.lambda_bar[active]
    lam_min = float(lam_act.min())
    lam_max = float(lam_act.max())
    if lam_max * max(n_months, 1) > MAX_LOG_GROWTH:
        raise NumericalBlowupError(0, "growth rate overflows over the solve window")

    spm = _stable_steps_per_month(
        steps_per_month, grid.coarse_cell_size, mu_max, lam_min, max(n_months, 1)
    )
    dt = 1.0 / spm
    n_steps = n_months * spm
    save_stride = spm * frame_stride_months
    if n_months % frame_stride_months:
        raise ConfigurationError("solve window must be a multiple of the frame stride")

    frames, status = kernels.run_coarse(
        cbar0,
        hom.mu_bar,
        hom.lambda_bar,
        active,
        dt,
        1.0 / grid.coarse_cell_size**2,
        n_steps,
        max(save_stride, 1),
    )
    if status >= 0:
        raise NumericalBlowupError(status)
    return IntensityTrajectory(
        grid=grid,
        rates=rates,
        t0=t0,
        frames=frames,
        on_fine_grid=False,
        frame_stride_months=frame_stride_months,
        dt=dt,
        steps_per_month=spm,
    )


def solve_fine_oracle(
    events: Sequence[IntroductionEvent],
    rates: RateFields,
    t_end: int,
    steps_per_month: int = 30,
    frame_stride_months: int = 1,
    max_cells: int = 128,
) -> IntensityTrajectory:
    """Direct fine-grid solve used to validate the upscaled path.

    Each event puts its whole mass into the single containing fine cell.
    Restricted to small grids; raises :class:`ConfigurationError` above
    ``max_cells`` per axis.
    """
    grid = rates.grid
    if grid.n_fine_rows > max_cells or grid.n_fine_cols > max_cells:
        raise ConfigurationError(
            f"fine oracle limited to {max_cells}x{max_cells} cells, grid is "
            f"{grid.n_fine_rows}x{grid.n_fine_cols}"
        )
    t0 = int(round(events[0].t0))
    if any(e.t0 != events[0].t0 for e in events):
        raise DomainError("all introduction events must share the same month")
    n_months = int(t_end) - t0
    if n_months < 0:
        raise ConfigurationError(f"t_end {t_end} precedes introduction month {t0}")

    u0 = np.zeros((grid.n_fine_rows, grid.n_fine_cols))
    for e in events:
        x, y = e.omega
        if not grid.contains(x, y):
            raise DomainError(f"introduction location ({x}, {y}) outside the study area")
        r, c = grid.fine_index(x, y)
        u0[r, c] += e.theta / grid.fine_cell_area

    mask = grid.domain_mask
    active = grid.fine_interior
    mu_max = float(rates.mu[mask].max())
    lam_min = float(rates.lam[mask].min())
    lam_max = float(rates.lam[mask].max())
    if lam_max * max(n_months, 1) > MAX_LOG_GROWTH:
        raise NumericalBlowupError(0, "growth rate overflows over the solve window")

    spm = _stable_steps_per_month(
        steps_per_month, grid.fine_cell_size, mu_max, lam_min, max(n_months, 1)
    )
    frames, status = kernels.run_fine(
        u0,
        rates.mu,
        rates.lam,
        active,
        1.0 / spm,
        1.0 / grid.fine_cell_size**2,
        n_months * spm,
        max(spm * frame_stride_months, 1),
    )
    if status >= 0:
        raise NumericalBlowupError(status)
    return IntensityTrajectory(
        grid=grid,
        rates=rates,
        t0=t0,
        frames=frames,
        on_fine_grid=True,
        frame_stride_months=frame_stride_months,
        dt=1.0 / spm,
        steps_per_month=spm,
    )


def downscale_intensity(cbar: np.ndarray, rates: RateFields) -> np.ndarray:
    """Recover fine intensity ``u = c / mu`` from a coarse frame.

    The coarse field is read as node values at coarse-cell centers and
    interpolated bilinearly to fine-cell centers; a ghost ring of zeros
    outside the array continues the absorbing boundary.  At ratio 1 the
    node sets coincide and the interpolation is exact.  Interpolating in
    index space keeps the result independent of the grid's origin.
    """
    grid = rates.grid
    r = grid.ratio
    if r == 1:
        c_fine = cbar
    else:
        padded = np.zeros((grid.n_coarse_rows + 2, grid.n_coarse_cols + 2))
        padded[1:-1, 1:-1] = cbar
        fr = (np.arange(grid.n_fine_rows) + 0.5) / r + 0.5
        fc = (np.arange(grid.n_fine_cols) + 0.5) / r + 0.5
        r0 = np.floor(fr).astype(np.intp)
        c0 = np.floor(fc).astype(np.intp)
        wr = fr - r0
        wc = fc - c0
        c_fine = (
            padded[np.ix_(r0, c0)] * np.outer(1.0 - wr, 1.0 - wc)
            + padded[np.ix_(r0, c0 + 1)] * np.outer(1.0 - wr, wc)
            + padded[np.ix_(r0 + 1, c0)] * np.outer(wr, 1.0 - wc)
            + padded[np.ix_(r0 + 1, c0 + 1)] * np.outer(wr, wc)
        )
    return np.where(grid.domain_mask, c_fine / rates.mu, 0.0)


def integrate_intensity(
    u_fine: np.ndarray, grid: GridSpec, region: np.ndarray | None = None
) -> float:
    """Expected abundance: sum of intensity times fine-cell area over a region."""
    if region is None:
        region = grid.domain_mask
    else:
        region = np.asarray(region, dtype=bool) & grid.domain_mask
    return float(u_fine[region].sum() * grid.fine_cell_area)
