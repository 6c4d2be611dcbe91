"""Sampler tests: configuration, the conjugate beta block, prior recovery,
determinism, and the chains CSV format.

The beta block is cross-checked against an independent random-walk
Metropolis sampler written here in the test, targeting the same probit
conditional; agreement is judged on posterior means with Monte Carlo error
from batch means.
"""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import log_ndtr, ndtri

from introdiff.errors import ConfigurationError, DomainError
from introdiff.grid import CovariateRaster, build_grid
from introdiff.mcmc import (
    CHAIN_TAIL,
    GibbsSampler,
    MCMCConfig,
    ParameterState,
    PriorSpec,
    ProposalScales,
    draw_from_prior,
    parameter_names,
    read_chains_csv,
    run_mcmc,
    states_from_chains,
    write_chains_csv,
)
from introdiff.months import month_index
from introdiff.observation import (
    SampleSet,
    SusceptibilityDesign,
    simulate_samples,
)
from introdiff.solver import IntroductionEvent, make_rate_fields, solve_homogenized


def tiny_grid():
    # 3x3 cells of 100 km, ratio 1; big cells keep diffusion cheap and mild
    return build_grid((0.0, 0.0, 300.0, 300.0), 100.0, 100.0)


def flat_covariates(grid, **layers):
    cov = CovariateRaster(grid)
    shape = (grid.n_fine_rows, grid.n_fine_cols)
    for name, value in layers.items():
        cov.add_layer(name, np.full(shape, float(value)))
    return cov


def make_dataset(n=60, seed=5, beta_true=(0.8, -0.5)):
    """Simulated presence/absence on the tiny grid with a known pulse."""
    grid = tiny_grid()
    cov = flat_covariates(grid, habitat=0.0)
    design = SusceptibilityDesign(["a", "b"])
    rates = make_rate_fields(0.0, [0.0], 0.0, [], cov, ["habitat"], [])
    event = IntroductionEvent(omega=(150.0, 150.0), t0=month_index("2003-12"), theta=1e4)
    traj = solve_homogenized([event], rates, month_index("2004-02"), steps_per_month=10)
    rng = np.random.default_rng(seed)
    pts = []
    for i in range(n):
        x = float(rng.uniform(5.0, 295.0))
        y = float(rng.uniform(5.0, 295.0))
        date = month_index("2004-01" if i % 2 else "2004-02")
        pts.append((x, y, date, "a" if i % 3 else "b"))
    samples = simulate_samples(pts, traj, np.array(beta_true), design, rng)
    prior = PriorSpec(t0_min=month_index("2003-06"), t0_max=month_index("2003-12"))
    return grid, cov, design, samples, prior


@pytest.fixture(scope="module")
def dataset():
    return make_dataset()


@pytest.fixture(scope="module")
def micro_chains(dataset):
    grid, cov, design, samples, prior = dataset
    config = MCMCConfig(
        n_chains=2, n_iterations=240, n_burnin=60, thin=3, seed=42,
        steps_per_month=10,
    )
    return run_mcmc(samples, cov, prior, config, design=design)


class TestConfigValidation:
    def test_retained_arithmetic(self):
        cfg = MCMCConfig(n_chains=3, n_iterations=320000, n_burnin=20000, thin=100)
        assert cfg.n_retained == 3000

    def test_thin_remainder_floors(self):
        assert MCMCConfig(n_iterations=107, n_burnin=7, thin=10).n_retained == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_chains": 0},
            {"n_iterations": 100, "n_burnin": 100},
            {"n_iterations": 100, "n_burnin": 200},
            {"n_burnin": -1},
            {"thin": 0},
            {"n_events": 0},
        ],
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            MCMCConfig(**kwargs)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": 0.0},
            {"gamma": -0.1},
            {"log_theta": 0.0},
            {"omega_km": -1.0},
            {"t0_months": 0},
        ],
    )
    def test_bad_scales(self, kwargs):
        with pytest.raises(ConfigurationError):
            ProposalScales(**kwargs)

    def test_bad_prior_window(self):
        with pytest.raises(ConfigurationError):
            PriorSpec(t0_min=10, t0_max=9)
        with pytest.raises(ConfigurationError):
            PriorSpec(t0_min=0, t0_max=10, beta_sd=0.0)
        assert PriorSpec(t0_min=3, t0_max=14).window_size == 12


class TestParameterState:
    def kwargs(self):
        return dict(
            beta=np.array([0.1]),
            alpha0=0.0,
            alpha=np.array([0.2]),
            gamma0=0.0,
            gamma=np.array([]),
            omega=np.array([[10.0, 20.0]]),
            t0=5,
            theta=np.array([2.0]),
        )

    def test_events_share_t0(self):
        kw = self.kwargs()
        kw["omega"] = np.array([[10.0, 20.0], [30.0, 40.0]])
        kw["theta"] = np.array([2.0, 3.0])
        state = ParameterState(**kw)
        events = state.events()
        assert state.n_events == 2
        assert [e.t0 for e in events] == [5, 5]
        assert events[1].omega == (30.0, 40.0)
        assert events[0].theta == 2.0

    def test_nonpositive_theta(self):
        kw = self.kwargs()
        kw["theta"] = np.array([0.0])
        with pytest.raises(DomainError):
            ParameterState(**kw)

    def test_nonfinite_rejected(self):
        kw = self.kwargs()
        kw["beta"] = np.array([np.nan])
        with pytest.raises(DomainError):
            ParameterState(**kw)

    def test_theta_omega_mismatch(self):
        kw = self.kwargs()
        kw["theta"] = np.array([2.0, 3.0])
        with pytest.raises(ConfigurationError):
            ParameterState(**kw)


class TestParameterNames:
    def test_single_source_order(self):
        design = SusceptibilityDesign(["lulu", "myse"])
        names = parameter_names(design, ["forest"], ["karst"])
        assert names == [
            "beta_lulu", "beta_myse",
            "alpha0", "alpha_forest",
            "gamma0", "gamma_karst",
            "omega_x", "omega_y", "t0", "theta",
        ]

    def test_two_sources_t0_last(self):
        design = SusceptibilityDesign(["a"])
        names = parameter_names(design, [], [], n_events=2)
        assert names == [
            "beta_a", "alpha0", "gamma0",
            "omega_x_1", "omega_y_1", "theta_1",
            "omega_x_2", "omega_y_2", "theta_2",
            "t0",
        ]


class TestPriorDraw:
    def test_shapes_and_support(self):
        grid = tiny_grid()
        prior = PriorSpec(t0_min=0, t0_max=11)
        rng = np.random.default_rng(0)
        for _ in range(50):
            state = draw_from_prior(prior, grid, rng, 2, 1, 0, n_events=2)
            assert state.beta.shape == (2,)
            assert state.alpha.shape == (1,)
            assert state.gamma.shape == (0,)
            assert 0 <= state.t0 <= 11
            assert np.all(state.theta > 0)
            for x, y in state.omega:
                assert grid.contains(float(x), float(y))


class TestBetaGibbs:
    """Gibbs draws for beta against an independent random-walk sampler."""

    def rw_oracle(self, X, y, offset, sd, n_iter, rng):
        beta = np.zeros(X.shape[1])

        def lp(b):
            eta = offset + X @ b
            ll = np.sum(np.where(y == 1, log_ndtr(eta), log_ndtr(-eta)))
            return ll - 0.5 * np.sum(b**2) / sd**2

        cur = lp(beta)
        out = np.empty((n_iter, X.shape[1]))
        for i in range(n_iter):
            prop = beta + 0.25 * rng.standard_normal(X.shape[1])
            cand = lp(prop)
            if math.log(rng.random()) < cand - cur:
                beta, cur = prop, cand
            out[i] = beta
        return out

    @staticmethod
    def batch_se(draws, n_batch=40):
        m = len(draws) // n_batch
        means = draws[: m * n_batch].reshape(n_batch, m, -1).mean(axis=1)
        return means.std(axis=0, ddof=1) / math.sqrt(n_batch)

    def test_matches_random_walk(self, dataset):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(n_iterations=100, n_burnin=10, steps_per_month=10)
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design,
            z_layers=["habitat"], w_layers=[],
        )
        state = draw_from_prior(
            prior, grid, np.random.default_rng(3), design.p, 1, 0
        )
        state = state.__class__(**{**state.__dict__, "t0": month_index("2003-12")})
        traj = sampler.solve(state)

        rng = np.random.default_rng(11)
        n_gibbs = 4000
        gibbs = np.empty((n_gibbs, design.p))
        for i in range(n_gibbs):
            beta = sampler.update_beta(state, traj, rng)
            state = ParameterState(**{**state.__dict__, "beta": beta})
            gibbs[i] = beta
        gibbs = gibbs[200:]

        u = traj.u_at(samples.fine_cells(grid)[0], samples.fine_cells(grid)[1],
                      samples.date)
        offset = np.log(np.maximum(u, 1e-12))
        X = design.encode_many(samples.species)
        rw = self.rw_oracle(
            X, samples.y, offset, prior.beta_sd, 30000, np.random.default_rng(12)
        )[2000:]

        se = np.sqrt(self.batch_se(gibbs) ** 2 + self.batch_se(rw) ** 2)
        diff = np.abs(gibbs.mean(axis=0) - rw.mean(axis=0))
        assert np.all(diff < 3 * se), (diff, se)

    def test_prior_only_draw(self, dataset):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(n_iterations=100, n_burnin=10)
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design, use_likelihood=False
        )
        rng = np.random.default_rng(0)
        draws = np.array([sampler.update_beta(None, None, rng) for _ in range(4000)])
        assert draws.shape == (4000, 2)
        # iid normal draws from the prior
        p = stats.kstest(draws.ravel() / prior.beta_sd, "norm").pvalue
        assert p > 0.001


@pytest.fixture(scope="module")
def prior_chain():
    grid = tiny_grid()
    cov = flat_covariates(grid)  # no layers at all
    design = SusceptibilityDesign(["a"])
    empty = SampleSet(
        x_km=np.array([]), y_km=np.array([]),
        date=np.array([], dtype=int),
        species=np.array([], dtype="U8"), y=np.array([]),
    )
    prior = PriorSpec(t0_min=month_index("2002-01"), t0_max=month_index("2003-12"))
    config = MCMCConfig(
        n_chains=1, n_iterations=21000, n_burnin=1000, thin=10, seed=7,
    )
    sampler = GibbsSampler(
        empty, cov, prior, config, design=design,
        z_layers=[], w_layers=[], use_likelihood=False,
    )
    return sampler.run()[0], prior, grid


class TestPriorRecovery:
    """With the likelihood off the chain must reproduce the prior."""

    def test_t0_uniform(self, prior_chain):
        chain, prior, _ = prior_chain
        t0 = chain.column("t0").astype(int)
        assert t0.min() >= prior.t0_min and t0.max() <= prior.t0_max
        counts = np.bincount(t0 - prior.t0_min, minlength=prior.window_size)
        p = stats.chisquare(counts).pvalue
        assert p > 0.001, (p, counts)

    def test_theta_lognormal(self, prior_chain):
        chain, _, _ = prior_chain
        theta = chain.column("theta")
        assert np.all(theta > 0)
        p = stats.kstest(np.log(theta), "norm").pvalue
        assert p > 0.001, p

    def test_omega_uniform_over_cells(self, prior_chain):
        chain, _, grid = prior_chain
        x = chain.column("omega_x")
        y = chain.column("omega_y")
        rows, cols = grid.fine_indices_of(x, y)
        counts = np.bincount(rows * 3 + cols, minlength=9)
        p = stats.chisquare(counts).pvalue
        assert p > 0.001, (p, counts)

    def test_dynamics_normal(self, prior_chain):
        chain, prior, _ = prior_chain
        a0 = chain.column("alpha0")
        p = stats.kstest(a0 / prior.alpha_gamma_sd, "norm").pvalue
        assert p > 0.001, p

    def test_acceptance_includes_exact_beta(self, prior_chain):
        chain, _, _ = prior_chain
        assert chain.acceptance["beta"] == 1.0
        assert chain.rejected_blowups == 0


class TestFrozenProposals:
    """A vanishing step size must propose the current point and accept it."""

    def test_dynamics_stay_put(self, dataset):
        grid, cov, design, samples, prior = dataset
        scales = ProposalScales(alpha=1e-300, gamma=1e-300, log_theta=1e-300)
        config = MCMCConfig(
            n_iterations=40, n_burnin=0, adapt=False, seed=1,
            proposal_scales=scales,
        )
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design, use_likelihood=False
        )
        chain = sampler.run()[0]
        for name in ("alpha0", "alpha_habitat", "gamma0"):
            col = chain.column(name)
            assert np.all(col == col[0])
        assert chain.acceptance["alpha"] == 1.0
        assert chain.acceptance["gamma"] == 1.0
        assert chain.acceptance["theta"] == 1.0


class TestChainInvariants:
    def test_retained_support(self, dataset, micro_chains):
        grid, _, _, _, prior = dataset
        for chain in micro_chains:
            assert chain.draws.shape == (60, len(chain.names))
            for state in chain.states():
                assert np.all(state.theta > 0)
                assert prior.t0_min <= state.t0 <= prior.t0_max
                assert grid.contains(float(state.omega[0, 0]), float(state.omega[0, 1]))
            assert np.all(np.isfinite(chain.log_post))

    def test_iterations_recorded(self, micro_chains):
        chain = micro_chains[0]
        assert chain.iters[0] == 63
        assert chain.iters[-1] == 240
        assert np.all(np.diff(chain.iters) == 3)

    def test_chains_differ(self, micro_chains):
        a, b = micro_chains
        assert a.chain_id == 0 and b.chain_id == 1
        assert not np.array_equal(a.draws, b.draws)

    def test_window_must_precede_samples(self, dataset):
        grid, cov, design, samples, _ = dataset
        late = PriorSpec(
            t0_min=month_index("2003-06"), t0_max=month_index("2004-01")
        )
        with pytest.raises(ConfigurationError, match="before the first sample"):
            GibbsSampler(samples, cov, late, MCMCConfig(), design=design)


class TestDeterminism:
    def test_rerun_identical(self, dataset, micro_chains):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(
            n_chains=2, n_iterations=240, n_burnin=60, thin=3, seed=42,
            steps_per_month=10,
        )
        again = run_mcmc(samples, cov, prior, config, design=design)
        for a, b in zip(micro_chains, again):
            assert np.array_equal(a.draws, b.draws)
            assert np.array_equal(a.log_post, b.log_post)
            assert a.acceptance == b.acceptance

    def test_csv_bytes_identical(self, micro_chains, tmp_path):
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_chains_csv(p1, micro_chains)
        write_chains_csv(p2, micro_chains)
        assert p1.read_bytes() == p2.read_bytes()


class TestChainCsv:
    def test_round_trip(self, micro_chains, tmp_path):
        path = tmp_path / "chains.csv"
        write_chains_csv(path, micro_chains)
        back = read_chains_csv(path)
        assert len(back) == 2
        for a, b in zip(micro_chains, back):
            assert a.names == b.names
            assert np.array_equal(a.draws, b.draws)
            assert np.array_equal(a.log_post, b.log_post)
            assert np.array_equal(a.iters, b.iters)
            assert a.chain_id == b.chain_id
            assert b.species == a.species
            assert b.z_layers == a.z_layers
            assert b.w_layers == a.w_layers
            assert b.n_events == 1

    def test_t0_written_as_integer(self, micro_chains, tmp_path):
        path = tmp_path / "chains.csv"
        write_chains_csv(path, micro_chains)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        assert header[-3:] == CHAIN_TAIL
        t0_col = header.index("t0")
        for line in lines[1:3]:
            assert "." not in line.split(",")[t0_col]

    def test_missing_tail_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("beta_a,t0,theta\n0.1,5,2.0\n")
        with pytest.raises(ConfigurationError):
            read_chains_csv(path)

    def test_states_from_chains(self, micro_chains):
        states = states_from_chains(micro_chains)
        assert len(states) == 120
        first = states[0]
        row = micro_chains[0].draws[0]
        names = micro_chains[0].names
        assert first.beta[0] == row[names.index("beta_a")]
        assert first.t0 == int(round(row[names.index("t0")]))
        assert first.theta[0] == row[names.index("theta")]


class TestBlowupHandling:
    def test_try_solve_flags_overflow(self, dataset):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(steps_per_month=10)
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design,
            z_layers=["habitat"], w_layers=[],
        )
        state = ParameterState(
            beta=np.zeros(2),
            alpha0=0.0, alpha=np.array([0.0]),
            gamma0=800.0, gamma=np.array([]),
            omega=np.array([[150.0, 150.0]]),
            t0=month_index("2003-12"),
            theta=np.array([1.0]),
        )
        traj, ll, blew = sampler._try_solve(state)
        assert traj is None
        assert ll == -math.inf
        assert blew is True


class TestAdaptation:
    def test_scales_move_during_burnin(self, dataset):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(
            n_iterations=120, n_burnin=100, seed=3, adapt=True
        )
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design, use_likelihood=False
        )
        chain = sampler.run()[0]
        defaults = ProposalScales()
        assert chain.final_scales["alpha"] != defaults.alpha

    def test_adapt_off_keeps_scales(self, dataset):
        grid, cov, design, samples, prior = dataset
        config = MCMCConfig(n_iterations=60, n_burnin=20, seed=3, adapt=False)
        sampler = GibbsSampler(
            samples, cov, prior, config, design=design, use_likelihood=False
        )
        chain = sampler.run()[0]
        defaults = ProposalScales()
        assert chain.final_scales["alpha"] == defaults.alpha
        assert chain.final_scales["omega"] == defaults.omega_km


class TestRestartTournament:
    def make_config(self, n_starts):
        return MCMCConfig(
            n_chains=1, n_iterations=40, n_burnin=10, thin=1, seed=21,
            steps_per_month=10, n_starts=n_starts, pilot_iterations=15,
        )

    def run_once(self, dataset, n_starts):
        grid, cov, design, samples, prior = dataset
        sampler = GibbsSampler(
            samples, cov, prior, self.make_config(n_starts),
            design=design, z_layers=["habitat"], w_layers=[],
        )
        return sampler.run()[0]

    def test_deterministic(self, dataset):
        a = self.run_once(dataset, 3)
        b = self.run_once(dataset, 3)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.log_post, b.log_post)

    def test_consumes_different_stream_than_single_start(self, dataset):
        single = self.run_once(dataset, 1)
        multi = self.run_once(dataset, 3)
        assert single.draws.shape == multi.draws.shape
        assert not np.array_equal(single.draws, multi.draws)

    def test_acceptance_counts_main_run_only(self, dataset):
        chain = self.run_once(dataset, 3)
        # 40 sweeps, one introduction proposal each; pilots are excluded
        assert 0.0 <= chain.acceptance["introduction"] <= 1.0
        assert len(chain.draws) == 30

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n_starts=0), dict(n_starts=2, pilot_iterations=0)],
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            MCMCConfig(n_iterations=40, n_burnin=10, **kwargs)
