"""Logistic-regression baseline fit by iteratively reweighted least squares.

This is the comparison model for forecast scoring: plain logistic regression
on habitat covariates and species indicators, no dynamics.  The fit drops
aliased columns, keeps the deviance monotone by step-halving, and caps
runaway coefficients when the classes separate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.special import expit

from .errors import ConfigurationError

COEF_CAP = 20.0
_P_EPS = 1e-10


@dataclass
class GlmFit:
    coef: np.ndarray
    kept: np.ndarray
    deviance_trace: list[float]
    converged: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def deviance(self) -> float:
        return self.deviance_trace[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.coef):
            raise ConfigurationError(
                f"design has {X.shape[1]} columns, fit expects {len(self.coef)}"
            )
        return expit(X @ self.coef)


def _deviance(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, _P_EPS, 1.0 - _P_EPS)
    return float(-2.0 * np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def fit_logistic(
    X: np.ndarray, y: np.ndarray, max_iter: int = 50, tol: float = 1e-8
) -> GlmFit:
    """IRLS fit; returns a full-length coefficient vector, zeros for dropped
    (aliased) columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ConfigurationError("design matrix and outcomes do not align")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ConfigurationError("outcomes must be 0 or 1")
    n, k = X.shape
    warnings: list[str] = []

    # rank check via pivoted QR; aliased columns are dropped, not imputed
    _, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    thresh = diag.max() * max(n, k) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > thresh).sum())
    kept = np.zeros(k, dtype=bool)
    kept[piv[:rank]] = True
    if rank < k:
        warnings.append(f"dropped {k - rank} aliased design column(s): {sorted(piv[rank:])}")
    Xk = X[:, kept]

    beta = np.zeros(rank)
    p = expit(Xk @ beta)
    trace = [_deviance(y, p)]
    converged = False
    for _ in range(max_iter):
        p = np.clip(expit(Xk @ beta), _P_EPS, 1.0 - _P_EPS)
        w = p * (1.0 - p)
        z = Xk @ beta + (y - p) / w
        sw = np.sqrt(w)
        step, *_ = np.linalg.lstsq(Xk * sw[:, None], z * sw, rcond=None)
        # step-halve toward the previous iterate until the deviance drops
        candidate = step
        dev = _deviance(y, expit(Xk @ candidate))
        halvings = 0
        while dev > trace[-1] and halvings < 30:
            candidate = 0.5 * (candidate + beta)
            dev = _deviance(y, expit(Xk @ candidate))
            halvings += 1
        if dev > trace[-1]:  # no step improves; stay put
            candidate, dev = beta, trace[-1]
        beta = candidate
        trace.append(dev)
        if abs(trace[-2] - trace[-1]) < tol * (abs(trace[-2]) + 0.1):
            converged = True
            break
    if np.abs(beta).max(initial=0.0) > COEF_CAP:
        # the trace stays as fitted; the cap only bounds the reported model
        warnings.append(
            "coefficients capped at |20|; classes may be completely separated"
        )
        beta = np.clip(beta, -COEF_CAP, COEF_CAP)
        converged = False
    coef = np.zeros(k)
    coef[kept] = beta
    return GlmFit(coef=coef, kept=kept, deviance_trace=trace, converged=converged, warnings=warnings)


def glm_design(
    covariate_values: np.ndarray,
    species: list[str],
    species_order: list[str],
) -> np.ndarray:
    """Intercept + covariates + reference-coded species indicators.

    The first species in ``species_order`` is the reference level.
    """
    covariate_values = np.atleast_2d(np.asarray(covariate_values, dtype=float))
    n = covariate_values.shape[0]
    if len(species) != n:
        raise ConfigurationError("species labels and covariate rows do not align")
    unknown = sorted(set(species) - set(species_order))
    if unknown:
        raise ConfigurationError(f"unknown species {unknown}")
    cols = [np.ones((n, 1)), covariate_values]
    for s in species_order[1:]:
        cols.append((np.asarray(species, dtype=object) == s).astype(float)[:, None])
    return np.hstack(cols)


def glm_baseline(
    train_covariates: np.ndarray,
    train_species: list[str],
    train_y: np.ndarray,
    test_covariates: np.ndarray,
    test_species: list[str],
    species_order: list[str],
) -> tuple[np.ndarray, GlmFit]:
    """Fit on the training block, return predicted probabilities on the test
    block along with the fit itself."""
    X_train = glm_design(train_covariates, train_species, species_order)
    X_test = glm_design(test_covariates, test_species, species_order)
    fit = fit_logistic(X_train, np.asarray(train_y, dtype=float))
    return fit.predict(X_test), fit
