"""Two-resolution spatial grid, covariate layers, and harmonic-mean upscaling.

The study area is discretized twice: a fine grid on which environmental
covariates and the rate fields live, and a coarse grid (an exact integer
multiple of the fine spacing) on which the upscaled dynamics are stepped.
Row 0 is the northmost row; cells are indexed row-major.  All coordinates
are planar km relative to the lower-left corner of the extent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    """Immutable two-resolution grid over a rectangular extent.

    Attributes
    ----------
    origin : (xll, yll) of the extent in km.
    fine_cell_size, coarse_cell_size : cell edge lengths in km; the coarse
        size is an exact integer multiple of the fine size.
    n_fine_rows, n_fine_cols : fine-grid shape (row 0 = north).
    domain_mask : bool array over fine cells; True = inside the study area.
    """

    origin: tuple[float, float]
    fine_cell_size: float
    coarse_cell_size: float
    n_fine_rows: int
    n_fine_cols: int
    domain_mask: np.ndarray

    # derived, filled in __post_init__
    ratio: int = field(init=False)
    n_coarse_rows: int = field(init=False)
    n_coarse_cols: int = field(init=False)
    coarse_cell_counts: np.ndarray = field(init=False, repr=False)
    coarse_active: np.ndarray = field(init=False, repr=False)
    coarse_interior: np.ndarray = field(init=False, repr=False)
    fine_interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ratio_f = self.coarse_cell_size / self.fine_cell_size
        ratio = int(round(ratio_f))
        if abs(ratio_f - ratio) > 1e-9 or ratio < 1:
            raise ConfigurationError(
                f"coarse cell size {self.coarse_cell_size} is not an integer "
                f"multiple of fine cell size {self.fine_cell_size}"
            )
        if self.n_fine_rows % ratio or self.n_fine_cols % ratio:
            raise ConfigurationError(
                f"fine grid {self.n_fine_rows}x{self.n_fine_cols} does not tile "
                f"into coarse cells of ratio {ratio}"
            )
        mask = np.asarray(self.domain_mask, dtype=bool)
        if mask.shape != (self.n_fine_rows, self.n_fine_cols):
            raise ConfigurationError(
                f"mask shape {mask.shape} does not match grid "
                f"{(self.n_fine_rows, self.n_fine_cols)}"
            )
        if not mask[1:-1, 1:-1].any():
            raise DomainError("domain mask has no interior cell")

        object.__setattr__(self, "domain_mask", _readonly(mask))
        object.__setattr__(self, "ratio", ratio)
        ncr = self.n_fine_rows // ratio
        ncc = self.n_fine_cols // ratio
        object.__setattr__(self, "n_coarse_rows", ncr)
        object.__setattr__(self, "n_coarse_cols", ncc)

        counts = mask.reshape(ncr, ratio, ncc, ratio).sum(axis=(1, 3))
        active = counts > 0
        interior = active.copy()
        interior[0, :] = interior[-1, :] = False
        interior[:, 0] = interior[:, -1] = False
        fine_int = mask.copy()
        fine_int[0, :] = fine_int[-1, :] = False
        fine_int[:, 0] = fine_int[:, -1] = False
        object.__setattr__(self, "coarse_cell_counts", _readonly(counts))
        object.__setattr__(self, "coarse_active", _readonly(active))
        object.__setattr__(self, "coarse_interior", _readonly(interior))
        object.__setattr__(self, "fine_interior", _readonly(fine_int))

    # -- areas ---------------------------------------------------------------

    @property
    def fine_cell_area(self) -> float:
        return self.fine_cell_size**2

    @property
    def coarse_cell_area(self) -> float:
        return self.coarse_cell_size**2

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in km."""
        x0, y0 = self.origin
        return (
            x0,
            y0,
            x0 + self.n_fine_cols * self.fine_cell_size,
            y0 + self.n_fine_rows * self.fine_cell_size,
        )

    # -- coordinate <-> index maps -------------------------------------------

    def fine_index(self, x: float, y: float) -> tuple[int, int]:
        """Fine (row, col) of the cell containing planar point (x, y) km."""
        xmin, ymin, xmax, ymax = self.extent
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            raise DomainError(f"point ({x}, {y}) outside grid extent")
        col = min(int((x - xmin) / self.fine_cell_size), self.n_fine_cols - 1)
        row_from_bottom = min(
            int((y - ymin) / self.fine_cell_size), self.n_fine_rows - 1
        )
        return self.n_fine_rows - 1 - row_from_bottom, col

    def coarse_index(self, x: float, y: float) -> tuple[int, int]:
        r, c = self.fine_index(x, y)
        return r // self.ratio, c // self.ratio

    def fine_center(self, row: int, col: int) -> tuple[float, float]:
        x0, y0 = self.origin
        x = x0 + (col + 0.5) * self.fine_cell_size
        y = y0 + (self.n_fine_rows - row - 0.5) * self.fine_cell_size
        return x, y

    def contains(self, x: float, y: float) -> bool:
        """True when (x, y) falls on a masked fine cell."""
        xmin, ymin, xmax, ymax = self.extent
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            return False
        r, c = self.fine_index(x, y)
        return bool(self.domain_mask[r, c])

    def fine_indices_of(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized fine_index for arrays of coordinates."""
        xmin, ymin, xmax, ymax = self.extent
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if ((xs < xmin) | (xs > xmax) | (ys < ymin) | (ys > ymax)).any():
            raise DomainError("point outside grid extent")
        cols = np.minimum(
            ((xs - xmin) / self.fine_cell_size).astype(int), self.n_fine_cols - 1
        )
        rows_b = np.minimum(
            ((ys - ymin) / self.fine_cell_size).astype(int), self.n_fine_rows - 1
        )
        return self.n_fine_rows - 1 - rows_b, cols

    def sample_point_in_mask(self, rng: np.random.Generator) -> tuple[float, float]:
        """Draw a point uniformly over the masked area."""
        rows, cols = np.nonzero(self.domain_mask)
        k = rng.integers(len(rows))
        xc, yc = self.fine_center(int(rows[k]), int(cols[k]))
        h = self.fine_cell_size
        return (
            xc + (rng.random() - 0.5) * h,
            yc + (rng.random() - 0.5) * h,
        )

    @property
    def masked_area(self) -> float:
        return float(self.domain_mask.sum()) * self.fine_cell_area


def build_grid(
    extent: tuple[float, float, float, float],
    fine_size: float,
    coarse_size: float,
    mask: np.ndarray | None = None,
) -> GridSpec:
    """Discretize a planar bounding box into the two-resolution grid.

    Parameters
    ----------
    extent : (xmin, ymin, xmax, ymax) in km; spans must be exact multiples
        of ``coarse_size``.
    fine_size, coarse_size : cell sizes in km; ``coarse_size`` must be an
        integer multiple of ``fine_size``.
    mask : optional fine-grid boolean raster (row 0 = north); defaults to
        all-inside.
    """
    xmin, ymin, xmax, ymax = extent
    if fine_size <= 0 or coarse_size <= 0:
        raise ConfigurationError("cell sizes must be positive")
    if xmax <= xmin or ymax <= ymin:
        raise ConfigurationError("extent is empty")
    ratio_f = coarse_size / fine_size
    if abs(ratio_f - round(ratio_f)) > 1e-9:
        raise ConfigurationError(
            f"coarse size {coarse_size} not divisible by fine size {fine_size}"
        )
    for span, name in (((xmax - xmin), "x"), ((ymax - ymin), "y")):
        if abs(span / coarse_size - round(span / coarse_size)) > 1e-9:
            raise ConfigurationError(
                f"extent {name}-span {span} is not a multiple of coarse size {coarse_size}"
            )
    n_cols = int(round((xmax - xmin) / fine_size))
    n_rows = int(round((ymax - ymin) / fine_size))
    if mask is None:
        mask = np.ones((n_rows, n_cols), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DomainError("domain mask is empty")
    return GridSpec(
        origin=(xmin, ymin),
        fine_cell_size=float(fine_size),
        coarse_cell_size=float(coarse_size),
        n_fine_rows=n_rows,
        n_fine_cols=n_cols,
        domain_mask=mask,
    )


class CovariateRaster:
    """Named per-fine-cell covariate layers attached to a grid.

    Layers must be finite on every masked cell; names are unique.
    """

    def __init__(self, grid: GridSpec, layers: Mapping[str, np.ndarray] | None = None):
        self.grid = grid
        self._layers: dict[str, np.ndarray] = {}
        if layers:
            for name, values in layers.items():
                self.add_layer(name, values)

    def add_layer(self, name: str, values: np.ndarray) -> None:
        if name in self._layers:
            raise ConfigurationError(f"duplicate covariate layer {name!r}")
        values = np.asarray(values, dtype=float)
        shape = (self.grid.n_fine_rows, self.grid.n_fine_cols)
        if values.shape != shape:
            raise ConfigurationError(
                f"layer {name!r} shape {values.shape} does not match grid {shape}"
            )
        if not np.isfinite(values[self.grid.domain_mask]).all():
            raise DomainError(f"layer {name!r} has non-finite values inside the mask")
        self._layers[name] = _readonly(values)

    def layer(self, name: str) -> np.ndarray:
        try:
            return self._layers[name]
        except KeyError:
            raise ConfigurationError(f"missing covariate layer {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._layers

    @property
    def names(self) -> list[str]:
        return list(self._layers)

    def stack(self, names: Sequence[str]) -> np.ndarray:
        """(n_layers, rows, cols) stack in the given order."""
        return np.stack([self.layer(n) for n in names]) if names else np.zeros(
            (0, self.grid.n_fine_rows, self.grid.n_fine_cols)
        )

    def values_at(self, names: Sequence[str], rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """(n_points, n_layers) covariate values at fine cells."""
        if not names:
            return np.zeros((len(np.atleast_1d(rows)), 0))
        return np.column_stack([self.layer(n)[rows, cols] for n in names])


@dataclass(frozen=True)
class HomogenizedField:
    """Upscaled per-coarse-cell diffusion and growth rates."""

    mu_bar: np.ndarray
    lambda_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_bar", _readonly(np.asarray(self.mu_bar, float)))
        object.__setattr__(
            self, "lambda_bar", _readonly(np.asarray(self.lambda_bar, float))
        )


def homogenize(mu_fine: np.ndarray, lambda_fine: np.ndarray, grid: GridSpec) -> HomogenizedField:
    """Upscale fine-scale rates to the coarse grid.

    Per coarse cell, over its masked fine cells: the diffusion rate is the
    harmonic mean ``n / sum(1/mu)`` and the growth rate is the 1/mu-weighted
    mean ``sum(lam/mu) / sum(1/mu)`` — the averaging consistent with stepping
    the scaled field ``c = mu * u`` on the coarse grid.  Coarse cells with no
    masked fine cells get zero rates and stay inactive.
    """
    mu_fine = np.asarray(mu_fine, dtype=float)
    lambda_fine = np.asarray(lambda_fine, dtype=float)
    mask = grid.domain_mask
    if (mu_fine[mask] <= 0).any() or not np.isfinite(mu_fine[mask]).all():
        raise DomainError("diffusion rate must be positive and finite on all masked cells")

    safe_mu = np.where(mask, mu_fine, 1.0)  # off-mask values may be junk
    inv_mu = np.where(mask, 1.0 / safe_mu, 0.0)
    lam_over_mu = np.where(mask, lambda_fine / safe_mu, 0.0)
    r = grid.ratio
    ncr, ncc = grid.n_coarse_rows, grid.n_coarse_cols
    denom = inv_mu.reshape(ncr, r, ncc, r).sum(axis=(1, 3))
    lam_num = lam_over_mu.reshape(ncr, r, ncc, r).sum(axis=(1, 3))
    counts = grid.coarse_cell_counts

    with np.errstate(divide="ignore", invalid="ignore"):
        mu_bar = np.where(counts > 0, counts / denom, 0.0)
        lambda_bar = np.where(counts > 0, lam_num / denom, 0.0)
    return HomogenizedField(mu_bar=mu_bar, lambda_bar=lambda_bar)
