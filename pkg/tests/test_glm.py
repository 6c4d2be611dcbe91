"""Logistic baseline: closed-form cases, recovery, aliasing, separation."""

import math

import numpy as np
import pytest
from scipy.special import expit

from introdiff.errors import ConfigurationError
from introdiff.glm import fit_logistic, glm_baseline, glm_design


class TestFitLogistic:
    def test_intercept_only_balanced(self):
        X = np.ones((100, 1))
        y = np.array([0.0, 1.0] * 50)
        fit = fit_logistic(X, y)
        assert fit.converged
        assert abs(fit.coef[0]) < 1e-6
        assert fit.predict(X) == pytest.approx(np.full(100, 0.5), abs=1e-6)
        assert fit.deviance == pytest.approx(200 * math.log(2), rel=1e-9)

    def test_two_group_closed_form(self):
        # saturated two-level design: the MLE is the empirical log odds
        d = np.concatenate([np.zeros(100), np.ones(200)])
        y = np.concatenate(
            [np.repeat([0.0, 1.0], [70, 30]), np.repeat([0.0, 1.0], [80, 120])]
        )
        X = np.column_stack([np.ones_like(d), d])
        fit = fit_logistic(X, y)
        b0 = math.log(30 / 70)
        b1 = math.log(120 / 80) - b0
        assert fit.coef == pytest.approx([b0, b1], rel=1e-6)

    def test_recovery_within_three_se(self):
        rng = np.random.default_rng(0)
        n = 10000
        x = rng.standard_normal(n)
        X = np.column_stack([np.ones(n), x])
        true = np.array([-0.3, 0.8])
        y = (rng.random(n) < expit(X @ true)).astype(float)
        fit = fit_logistic(X, y)
        p = fit.predict(X)
        w = p * (1 - p)
        cov = np.linalg.inv(X.T @ (X * w[:, None]))
        se = np.sqrt(np.diag(cov))
        assert np.all(np.abs(fit.coef - true) < 3 * se), (fit.coef, se)

    def test_duplicate_column_dropped(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(300)
        X = np.column_stack([np.ones(300), x, x])  # aliased pair
        y = (rng.random(300) < expit(0.5 * x)).astype(float)
        fit = fit_logistic(X, y)
        assert fit.kept.sum() == 2
        dropped = int(np.nonzero(~fit.kept)[0][0])
        assert dropped in (1, 2)
        assert fit.coef[dropped] == 0.0
        assert any("aliased" in w for w in fit.warnings)
        reduced = fit_logistic(X[:, fit.kept], y)
        assert fit.predict(X) == pytest.approx(reduced.predict(X[:, fit.kept]), abs=1e-8)

    def test_deviance_monotone(self):
        rng = np.random.default_rng(2)
        n = 500
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        y = (rng.random(n) < expit(X @ np.array([0.2, -1.0, 0.7]))).astype(float)
        fit = fit_logistic(X, y)
        trace = np.array(fit.deviance_trace)
        assert np.all(np.diff(trace) <= 1e-9)
        assert trace[-1] < trace[0]
        assert fit.converged

    def test_separation_capped(self):
        x = np.linspace(-2, 2, 80)
        y = (x > 0).astype(float)
        X = np.column_stack([np.ones(80), x])
        fit = fit_logistic(X, y)
        assert np.abs(fit.coef).max() == 20.0
        assert not fit.converged
        assert any("separated" in w for w in fit.warnings)

    def test_bad_outcomes(self):
        with pytest.raises(ConfigurationError):
            fit_logistic(np.ones((3, 1)), np.array([0.0, 1.0, 2.0]))

    def test_misaligned(self):
        with pytest.raises(ConfigurationError):
            fit_logistic(np.ones((3, 1)), np.zeros(4))

    def test_predict_shape_checked(self):
        fit = fit_logistic(np.ones((10, 1)), np.array([0.0, 1.0] * 5))
        with pytest.raises(ConfigurationError):
            fit.predict(np.ones((5, 2)))


class TestGlmDesign:
    def test_reference_coding(self):
        cov = np.array([[0.5], [1.5], [2.5], [3.5]])
        X = glm_design(cov, ["a", "b", "c", "a"], ["a", "b", "c"])
        assert X.shape == (4, 4)  # intercept, covariate, I(b), I(c)
        assert np.all(X[:, 0] == 1.0)
        assert X[:, 1].tolist() == [0.5, 1.5, 2.5, 3.5]
        assert X[:, 2].tolist() == [0.0, 1.0, 0.0, 0.0]
        assert X[:, 3].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_unknown_species(self):
        with pytest.raises(ConfigurationError, match="unknown species"):
            glm_design(np.zeros((2, 1)), ["a", "zz"], ["a", "b"])

    def test_misaligned_labels(self):
        with pytest.raises(ConfigurationError):
            glm_design(np.zeros((3, 1)), ["a", "a"], ["a"])


class TestGlmBaseline:
    def test_round_trip_predictions(self):
        rng = np.random.default_rng(3)
        n = 2000
        cov = rng.standard_normal((n, 1))
        species = ["a" if i % 2 else "b" for i in range(n)]
        shift = np.where(np.array(species) == "b", 0.8, 0.0)
        y = (rng.random(n) < expit(-0.2 + 0.9 * cov[:, 0] + shift)).astype(float)
        preds, fit = glm_baseline(
            cov[:1500], species[:1500], y[:1500],
            cov[1500:], species[1500:], ["a", "b"],
        )
        assert preds.shape == (500,)
        assert np.all((preds > 0) & (preds < 1))
        X_test = glm_design(cov[1500:], species[1500:], ["a", "b"])
        assert preds == pytest.approx(fit.predict(X_test))
        # held-out deviance should beat a coin-flip model
        test_y = y[1500:]
        dev = -2 * np.sum(test_y * np.log(preds) + (1 - test_y) * np.log1p(-preds))
        assert dev < 500 * 2 * math.log(2)
