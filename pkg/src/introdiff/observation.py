"""Bernoulli observation model linking intensity to test outcomes.

The probability that a tested individual is positive is the standard
log-normal CDF of the local intensity scaled by a species susceptibility
factor: ``p = Phi(log u + x' beta)``, using the identity
``Phi(log(u * exp(x'beta))) = Phi(log u + x'beta)`` as the computational
form.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError
from .grid import GridSpec
from .months import format_month, month_index
from .solver import IntensityTrajectory

PROB_CLAMP = 1e-12
# Intensities below this are floored inside the likelihood so the log offset
# in the latent-variable update stays finite.
INTENSITY_FLOOR = 1e-12

SAMPLE_CSV_HEADER = ["x_km", "y_km", "date", "species", "y"]


@dataclass(frozen=True)
class SampleRecord:
    """One tested individual: where, when, which species, and the outcome."""

    x_km: float
    y_km: float
    date: int
    species: str
    y: int

    def __post_init__(self):
        if self.y not in (0, 1):
            raise DomainError(f"outcome must be 0 or 1, got {self.y}")


class SusceptibilityDesign:
    """One-hot species encoding with no separate global intercept.

    The intercept would be confounded with the introduced mass, so each
    species carries its own coefficient.
    """

    def __init__(self, species_order: Sequence[str]):
        if len(set(species_order)) != len(species_order):
            raise ConfigurationError("duplicate species labels")
        self.species_order = list(species_order)
        self._index = {s: i for i, s in enumerate(self.species_order)}

    @property
    def p(self) -> int:
        return len(self.species_order)

    def encode(self, species: str) -> np.ndarray:
        x = np.zeros(self.p)
        try:
            x[self._index[species]] = 1.0
        except KeyError:
            raise ConfigurationError(f"unknown species {species!r}") from None
        return x

    def encode_many(self, species: Iterable[str]) -> np.ndarray:
        rows = [self._index[s] if s in self._index else -1 for s in species]
        if any(r < 0 for r in rows):
            bad = [s for s in species if s not in self._index]
            raise ConfigurationError(f"unknown species {bad}")
        X = np.zeros((len(rows), self.p))
        X[np.arange(len(rows)), rows] = 1.0
        return X


class SampleSet:
    """Columnar view over a collection of sample records."""

    def __init__(
        self,
        x_km: np.ndarray,
        y_km: np.ndarray,
        date: np.ndarray,
        species: np.ndarray,
        y: np.ndarray,
    ):
        self.x_km = np.asarray(x_km, dtype=float)
        self.y_km = np.asarray(y_km, dtype=float)
        self.date = np.asarray(date, dtype=int)
        self.species = np.asarray(species, dtype=object)
        self.y = np.asarray(y, dtype=int)
        n = len(self.x_km)
        if not all(len(a) == n for a in (self.y_km, self.date, self.species, self.y)):
            raise ConfigurationError("sample columns have unequal lengths")
        if not np.isin(self.y, (0, 1)).all():
            raise DomainError("outcomes must be 0 or 1")

    def __len__(self) -> int:
        return len(self.x_km)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord]) -> "SampleSet":
        return cls(
            x_km=np.array([r.x_km for r in records]),
            y_km=np.array([r.y_km for r in records]),
            date=np.array([r.date for r in records]),
            species=np.array([r.species for r in records], dtype=object),
            y=np.array([r.y for r in records]),
        )

    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(
                float(self.x_km[i]),
                float(self.y_km[i]),
                int(self.date[i]),
                str(self.species[i]),
                int(self.y[i]),
            )
            for i in range(len(self))
        ]

    def fine_cells(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        return grid.fine_indices_of(self.x_km, self.y_km)

    def validate_on(self, grid: GridSpec) -> None:
        rows, cols = self.fine_cells(grid)
        if not grid.domain_mask[rows, cols].all():
            raise DomainError("sample location outside the domain mask")


def write_samples_csv(path: str | os.PathLike, samples: SampleSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SAMPLE_CSV_HEADER)
        for i in range(len(samples)):
            w.writerow(
                [
                    repr(float(samples.x_km[i])),
                    repr(float(samples.y_km[i])),
                    format_month(samples.date[i]),
                    samples.species[i],
                    int(samples.y[i]),
                ]
            )


def read_samples_csv(path: str | os.PathLike) -> SampleSet:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != SAMPLE_CSV_HEADER:
            raise ConfigurationError(
                f"{path}: expected header {SAMPLE_CSV_HEADER}, got {header}"
            )
        xs, ys, dates, species, outcomes = [], [], [], [], []
        for row in r:
            if not row:
                continue
            xs.append(float(row[0]))
            ys.append(float(row[1]))
            dates.append(month_index(row[2]))
            species.append(row[3])
            outcomes.append(int(row[4]))
    return SampleSet(np.array(xs), np.array(ys), np.array(dates), np.array(species), np.array(outcomes))


def inverse_link(v: np.ndarray | float) -> np.ndarray | float:
    """Standard-lognormal CDF: ``Phi(log v)``, with the limit 0 at v = 0."""
    v_arr = np.asarray(v, dtype=float)
    if (v_arr < 0).any():
        raise DomainError("intensity must be non-negative")
    with np.errstate(divide="ignore"):
        out = np.where(v_arr > 0, ndtr(np.log(np.where(v_arr > 0, v_arr, 1.0))), 0.0)
    return float(out) if np.isscalar(v) or v_arr.ndim == 0 else out


def infection_probability(
    u: np.ndarray | float, x: np.ndarray, beta: np.ndarray
) -> np.ndarray | float:
    """``Phi(log u + x' beta)`` for intensity u and species indicator x."""
    u_arr = np.asarray(u, dtype=float)
    if (u_arr < 0).any():
        raise DomainError("intensity must be non-negative")
    shift = float(np.dot(np.asarray(x, float), np.asarray(beta, float)))
    with np.errstate(divide="ignore"):
        logu = np.log(np.where(u_arr > 0, u_arr, 1.0))
        out = np.where(u_arr > 0, ndtr(logu + shift), 0.0)
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


def probabilities(
    u: np.ndarray, X: np.ndarray, beta: np.ndarray, clamp: float = PROB_CLAMP
) -> np.ndarray:
    """Vectorized per-sample probabilities, clamped away from 0 and 1."""
    shift = X @ np.asarray(beta, float)
    with np.errstate(divide="ignore"):
        logu = np.log(np.where(u > 0, u, 1.0))
        p = np.where(u > 0, ndtr(logu + shift), 0.0)
    return np.clip(p, clamp, 1.0 - clamp)


def log_likelihood(
    samples: SampleSet,
    trajectory: IntensityTrajectory,
    beta: np.ndarray,
    design: SusceptibilityDesign,
) -> float:
    """Bernoulli log likelihood of the samples under the solved intensity.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before the logs so a
    positive test in a zero-intensity cell stays finite (and very
    unfavorable).
    """
    rows, cols = samples.fine_cells(trajectory.grid)
    u = trajectory.u_at(rows, cols, samples.date)
    X = design.encode_many(samples.species)
    p = probabilities(u, X, beta)
    y = samples.y
    return float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


def simulate_samples(
    design_points: Sequence[tuple[float, float, int, str]],
    trajectory: IntensityTrajectory,
    beta: np.ndarray,
    design: SusceptibilityDesign,
    rng: np.random.Generator,
) -> SampleSet:
    """Draw Bernoulli outcomes at (x, y, date, species) design points."""
    xs = np.array([d[0] for d in design_points], dtype=float)
    ys = np.array([d[1] for d in design_points], dtype=float)
    dates = np.array([d[2] for d in design_points], dtype=int)
    species = np.array([d[3] for d in design_points], dtype=object)
    rows, cols = trajectory.grid.fine_indices_of(xs, ys)
    u = trajectory.u_at(rows, cols, dates)
    X = design.encode_many(species)
    p = probabilities(u, X, beta)
    y = (rng.random(len(p)) < p).astype(int)
    return SampleSet(xs, ys, dates, species, y)
