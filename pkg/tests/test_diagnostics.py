"""Convergence diagnostics against cases with known answers.

iid sequences have ESS near n and split R-hat near 1; an AR(1) chain has
ESS n(1-rho)/(1+rho); degenerate inputs yield nan plus a warning rather
than an exception.
"""

import math

import numpy as np
import pytest

from introdiff.diagnostics import ChainDiagnostics, chain_diagnostics, ess, split_rhat
from introdiff.mcmc import ChainOutput


def fake_chain(draws, names, chain_id=0, acceptance=None):
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[0]
    return ChainOutput(
        chain_id=chain_id,
        names=list(names),
        draws=draws,
        log_post=np.zeros(n),
        iters=np.arange(1, n + 1),
        acceptance=acceptance or {"alpha": 0.3, "beta": 1.0},
        final_scales={},
        rejected_blowups=0,
        species=[],
        z_layers=[],
        w_layers=[],
        n_events=1,
    )


class TestSplitRhat:
    def test_iid_chains_near_one(self):
        rng = np.random.default_rng(0)
        chains = [rng.standard_normal(10000) for _ in range(4)]
        r = split_rhat(chains)
        assert 0.99 < r < 1.01

    def test_shifted_chains_flagged(self):
        rng = np.random.default_rng(1)
        chains = [rng.standard_normal(1000), rng.standard_normal(1000) + 5.0]
        assert split_rhat(chains) > 1.5

    def test_within_chain_trend_flagged(self):
        # halves of a trending chain disagree even with one chain per mode
        rng = np.random.default_rng(2)
        chains = [
            np.linspace(0, 5, 2000) + 0.1 * rng.standard_normal(2000)
            for _ in range(2)
        ]
        assert split_rhat(chains) > 1.5

    def test_constant_chains_nan(self):
        assert math.isnan(split_rhat([np.ones(100), np.ones(100)]))

    def test_too_short_nan(self):
        assert math.isnan(split_rhat([np.arange(3.0), np.arange(3.0)]))


class TestEss:
    def test_iid_near_n(self):
        rng = np.random.default_rng(3)
        n = 20000
        e = ess(rng.standard_normal(n))
        assert 0.75 * n < e < 1.25 * n

    def test_ar1_known_value(self):
        rho = 0.9
        n = 50000
        rng = np.random.default_rng(4)
        x = np.empty(n)
        x[0] = rng.standard_normal()
        noise = math.sqrt(1 - rho**2) * rng.standard_normal(n)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + noise[i]
        expected = n * (1 - rho) / (1 + rho)
        e = ess(x)
        assert abs(e - expected) < 0.25 * expected, (e, expected)

    def test_constant_nan(self):
        assert math.isnan(ess(np.full(100, 2.5)))

    def test_short_nan(self):
        assert math.isnan(ess(np.array([1.0, 2.0, 3.0])))

    def test_positive_and_at_most_wild(self):
        rng = np.random.default_rng(5)
        e = ess(np.cumsum(rng.standard_normal(5000)))  # random walk: tiny ESS
        assert 0 < e < 500


class TestChainDiagnostics:
    def make_pair(self, n=4000, seed=6):
        rng = np.random.default_rng(seed)
        names = ["a", "b"]
        return [
            fake_chain(rng.standard_normal((n, 2)), names, chain_id=i)
            for i in range(2)
        ]

    def test_iid_pair(self):
        chains = self.make_pair()
        d = chain_diagnostics(chains)
        assert set(d.rhat) == {"a", "b"}
        for r in d.rhat.values():
            assert 0.99 < r < 1.02
        for e in d.ess.values():
            assert e == pytest.approx(2 * 4000, rel=0.3)
        assert d.acceptance[0]["alpha"] == 0.3
        assert d.warnings == []

    def test_single_chain_warns(self):
        chains = self.make_pair()[:1]
        d = chain_diagnostics(chains)
        assert d.rhat == {}
        assert "single chain: split R-hat omitted" in d.warnings
        assert d.ess["a"] > 0

    def test_constant_parameter_warns(self):
        rng = np.random.default_rng(7)
        draws = rng.standard_normal((500, 2))
        draws[:, 1] = 3.0
        chains = [fake_chain(draws.copy(), ["a", "b"], chain_id=i) for i in range(2)]
        d = chain_diagnostics(chains)
        assert math.isnan(d.rhat["b"])
        assert math.isnan(d.ess["b"])
        assert any("b: R-hat undefined" in w for w in d.warnings)
        assert any("b: ESS undefined" in w for w in d.warnings)

    def test_dead_block_warns(self):
        chains = self.make_pair()
        chains[1] = fake_chain(
            chains[1].draws, ["a", "b"], chain_id=1,
            acceptance={"alpha": 0.0, "beta": 1.0},
        )
        d = chain_diagnostics(chains)
        assert any("chain 1" in w and "'alpha'" in w for w in d.warnings)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            chain_diagnostics([])

    def test_format_layout(self):
        d = ChainDiagnostics(
            rhat={"a": 1.0023, "b": math.nan},
            ess={"a": 812.3, "b": math.nan},
            acceptance={0: {"alpha": 0.31}},
            warnings=["b: R-hat undefined (zero within-chain variance)"],
        )
        text = d.format()
        lines = text.splitlines()
        assert lines[0] == "parameter  r_hat  ess"
        assert "a  1.0023  812.3" in lines
        assert "b  nan  nan" in lines
        assert "chain 0 acceptance: alpha=0.310" in lines
        assert text.endswith("warning: b: R-hat undefined (zero within-chain variance)")
