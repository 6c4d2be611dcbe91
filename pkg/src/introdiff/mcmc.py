"""Metropolis-within-Gibbs sampler for the introduction model.

Each iteration cycles four blocks:

  1. susceptibility ``beta``: exact Gibbs draw via truncated-normal latent
     augmentation (the probit-form conditional is conjugate once the solved
     intensity enters as a fixed offset),
  2. diffusion regression ``(alpha0, alpha)`` and growth regression
     ``(gamma0, gamma)``: blockwise Gaussian random-walk Metropolis, each
     proposal re-solving the PDE,
  3. introduced mass ``theta``: random walk on the log scale, one move per
     source,
  4. introduction ``(omega, t0)``: mixture of a local move (Gaussian walk on
     omega, integer walk on t0) and an independent draw from the prior.

Because omega and t0 carry uniform priors, the mixture kernel is symmetric
wherever the posterior is positive, and proposals that land outside the mask
or the month window are rejected outright; both facts together make the
plain likelihood-times-prior ratio the correct acceptance ratio.

Proposal scales follow Robbins-Monro adaptation during burn-in only, so the
retained draws come from a fixed transition kernel.  theta is carried on the
log scale throughout: the prior density below is the normal density of
log theta, which absorbs the lognormal Jacobian exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import truncnorm

from .errors import ConfigurationError, DomainError, NumericalBlowupError
from .grid import CovariateRaster, GridSpec
from .observation import (
    INTENSITY_FLOOR,
    SampleSet,
    SusceptibilityDesign,
    probabilities,
)
from .solver import IntensityTrajectory, IntroductionEvent, make_rate_fields, solve_homogenized

log = logging.getLogger(__name__)

LOCAL_MOVE_PROB = 0.9
TARGET_SCALAR = 0.44
TARGET_BLOCK = 0.234


@dataclass(frozen=True)
class ParameterState:
    """One point in parameter space; ``omega``/``theta`` have one row per source."""

    beta: np.ndarray
    alpha0: float
    alpha: np.ndarray
    gamma0: float
    gamma: np.ndarray
    omega: np.ndarray
    t0: int
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "t0", int(self.t0))
        if len(self.theta) != len(self.omega):
            raise ConfigurationError("omega and theta disagree on the number of sources")
        if not (self.theta > 0).all():
            raise DomainError("theta must be positive")
        for a in (self.beta, self.alpha, self.gamma, self.omega, self.theta):
            if not np.isfinite(a).all():
                raise DomainError("non-finite parameter value")
        if not np.isfinite([self.alpha0, self.gamma0]).all():
            raise DomainError("non-finite parameter value")

    @property
    def n_events(self) -> int:
        return len(self.theta)

    def events(self) -> tuple[IntroductionEvent, ...]:
        return tuple(
            IntroductionEvent(
                omega=(float(self.omega[j, 0]), float(self.omega[j, 1])),
                t0=self.t0,
                theta=float(self.theta[j]),
            )
            for j in range(self.n_events)
        )


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; location and introduction time are uniform.

    ``t0_min``/``t0_max`` bound the introduction month (inclusive) and must
    end before the first sample date.
    """

    t0_min: int
    t0_max: int
    beta_sd: float = 2.5
    alpha_gamma_sd: float = 2.5
    log_theta_mean: float = 0.0
    log_theta_sd: float = 1.0

    def __post_init__(self):
        if self.t0_max < self.t0_min:
            raise ConfigurationError("empty introduction-month window")
        for name in ("beta_sd", "alpha_gamma_sd", "log_theta_sd"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def window_size(self) -> int:
        return self.t0_max - self.t0_min + 1


@dataclass(frozen=True)
class ProposalScales:
    """Initial random-walk step sizes per block."""

    alpha: float = 0.1
    gamma: float = 0.02
    log_theta: float = 0.3
    omega_km: float = 30.0
    t0_months: int = 3

    def __post_init__(self):
        for name in ("alpha", "gamma", "log_theta", "omega_km"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"proposal scale {name} must be positive")
        if self.t0_months < 1:
            raise ConfigurationError("t0 step must be at least one month")


@dataclass(frozen=True)
class MCMCConfig:
    """Chain layout.

    ``n_starts > 1`` prepends a restart tournament to burn-in: that many
    short pilot lineages, each begun at a fresh prior draw, and the chain
    continues from the one with the best posterior density after
    ``pilot_iterations`` sweeps.  This guards against the dark-start trap
    where a low-diffusion initial draw floors the intensity at every sample
    and the susceptibility block then fakes the positive rate, leaving the
    chain on a likelihood plateau it cannot leave.
    """

    n_chains: int = 3
    n_iterations: int = 5000
    n_burnin: int = 1000
    thin: int = 1
    adapt: bool = True
    seed: int = 0
    proposal_scales: ProposalScales = field(default_factory=ProposalScales)
    steps_per_month: int = 30
    n_events: int = 1
    n_starts: int = 1
    pilot_iterations: int = 200

    def __post_init__(self):
        if self.n_chains < 1:
            raise ConfigurationError("need at least one chain")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ConfigurationError("burn-in must be shorter than the run")
        if self.thin < 1:
            raise ConfigurationError("thin must be at least 1")
        if self.n_events < 1:
            raise ConfigurationError("need at least one introduction source")
        if self.n_starts < 1:
            raise ConfigurationError("need at least one start")
        if self.n_starts > 1 and self.pilot_iterations < 1:
            raise ConfigurationError("pilot lineages need at least one sweep")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.n_burnin) // self.thin


CHAIN_TAIL = ["log_post", "chain_id", "iter"]


def parameter_names(
    design: SusceptibilityDesign,
    z_layers: Sequence[str],
    w_layers: Sequence[str],
    n_events: int = 1,
) -> list[str]:
    """Column order for chain output; the introduction block comes last.

    With several sources the per-source columns carry a 1-based suffix and
    the shared t0 stays a single column.
    """
    names = [f"beta_{s}" for s in design.species_order]
    names += ["alpha0"] + [f"alpha_{n}" for n in z_layers]
    names += ["gamma0"] + [f"gamma_{n}" for n in w_layers]
    if n_events == 1:
        names += ["omega_x", "omega_y", "t0", "theta"]
    else:
        for j in range(1, n_events + 1):
            names += [f"omega_x_{j}", f"omega_y_{j}", f"theta_{j}"]
        names += ["t0"]
    return names


@dataclass
class ChainOutput:
    """Retained draws of one chain in ``parameter_names`` column order."""

    chain_id: int
    names: list[str]
    draws: np.ndarray
    log_post: np.ndarray
    iters: np.ndarray
    acceptance: dict[str, float]
    final_scales: dict[str, float]
    rejected_blowups: int
    species: list[str]
    z_layers: list[str]
    w_layers: list[str]
    n_events: int

    def column(self, name: str) -> np.ndarray:
        try:
            return self.draws[:, self.names.index(name)]
        except ValueError:
            raise ConfigurationError(f"no chain column named {name!r}") from None

    def state_at(self, i: int) -> ParameterState:
        return _vector_to_state(
            self.draws[i], self.species, self.z_layers, self.w_layers, self.n_events
        )

    def states(self) -> list[ParameterState]:
        return [self.state_at(i) for i in range(len(self.draws))]


def _state_to_vector(state: ParameterState) -> np.ndarray:
    parts = [state.beta, [state.alpha0], state.alpha, [state.gamma0], state.gamma]
    if state.n_events == 1:
        parts.append([state.omega[0, 0], state.omega[0, 1], state.t0, state.theta[0]])
    else:
        for j in range(state.n_events):
            parts.append([state.omega[j, 0], state.omega[j, 1], state.theta[j]])
        parts.append([state.t0])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _vector_to_state(
    vec: np.ndarray, species: list[str], z_layers: list[str], w_layers: list[str], n_events: int
) -> ParameterState:
    p, q, r = len(species), len(z_layers), len(w_layers)
    beta, rest = vec[:p], vec[p:]
    alpha0, alpha, rest = rest[0], rest[1 : 1 + q], rest[1 + q :]
    gamma0, gamma, rest = rest[0], rest[1 : 1 + r], rest[1 + r :]
    if n_events == 1:
        omega = rest[:2].reshape(1, 2)
        t0, theta = int(round(rest[2])), rest[3:4]
    else:
        blocks = rest[: 3 * n_events].reshape(n_events, 3)
        omega, theta = blocks[:, :2], blocks[:, 2]
        t0 = int(round(rest[3 * n_events]))
    return ParameterState(
        beta=beta, alpha0=float(alpha0), alpha=alpha, gamma0=float(gamma0),
        gamma=gamma, omega=omega, t0=t0, theta=theta,
    )


def draw_from_prior(
    prior: PriorSpec,
    grid: GridSpec,
    rng: np.random.Generator,
    n_species: int,
    n_z: int,
    n_w: int,
    n_events: int = 1,
) -> ParameterState:
    omega = np.array([grid.sample_point_in_mask(rng) for _ in range(n_events)])
    return ParameterState(
        beta=rng.normal(0.0, prior.beta_sd, n_species),
        alpha0=rng.normal(0.0, prior.alpha_gamma_sd),
        alpha=rng.normal(0.0, prior.alpha_gamma_sd, n_z),
        gamma0=rng.normal(0.0, prior.alpha_gamma_sd),
        gamma=rng.normal(0.0, prior.alpha_gamma_sd, n_w),
        omega=omega,
        t0=int(rng.integers(prior.t0_min, prior.t0_max + 1)),
        theta=np.exp(rng.normal(prior.log_theta_mean, prior.log_theta_sd, n_events)),
    )


def _normal_logpdf_sum(x: np.ndarray, mean: float, sd: float) -> float:
    x = np.atleast_1d(x)
    return float(-0.5 * np.sum(((x - mean) / sd) ** 2) - len(x) * (0.5 * math.log(2 * math.pi) + math.log(sd)))


def log_prior(state: ParameterState, prior: PriorSpec, grid: GridSpec) -> float:
    """Joint prior log density with theta measured on the log scale."""
    if not prior.t0_min <= state.t0 <= prior.t0_max:
        return -math.inf
    for j in range(state.n_events):
        x, y = state.omega[j]
        if not grid.contains(x, y):
            return -math.inf
    lp = _normal_logpdf_sum(state.beta, 0.0, prior.beta_sd)
    lp += _normal_logpdf_sum(state.alpha, 0.0, prior.alpha_gamma_sd)
    lp += _normal_logpdf_sum(state.gamma, 0.0, prior.alpha_gamma_sd)
    lp += _normal_logpdf_sum(np.array([state.alpha0, state.gamma0]), 0.0, prior.alpha_gamma_sd)
    lp += _normal_logpdf_sum(np.log(state.theta), prior.log_theta_mean, prior.log_theta_sd)
    lp += -state.n_events * math.log(grid.masked_area)
    lp += -math.log(prior.window_size)
    return lp


class GibbsSampler:
    """Holds the data, priors, and config; runs chains.

    ``use_likelihood=False`` drops the data term (and all PDE solves), so the
    sampler targets the prior; the prior-recovery tests rely on this switch.
    """

    def __init__(
        self,
        samples: SampleSet,
        covariates: CovariateRaster,
        prior: PriorSpec,
        config: MCMCConfig,
        design: SusceptibilityDesign | None = None,
        z_layers: Sequence[str] | None = None,
        w_layers: Sequence[str] | None = None,
        use_likelihood: bool = True,
    ):
        self.samples = samples
        self.covariates = covariates
        self.grid = covariates.grid
        self.prior = prior
        self.config = config
        self.use_likelihood = use_likelihood
        if design is None:
            design = SusceptibilityDesign(sorted(set(samples.species.tolist())))
        self.design = design
        self.z_layers = list(covariates.names if z_layers is None else z_layers)
        self.w_layers = list(covariates.names if w_layers is None else w_layers)
        if use_likelihood:
            if len(samples) == 0:
                raise ConfigurationError("no samples to fit")
            samples.validate_on(self.grid)
            if prior.t0_max >= int(samples.date.min()):
                raise ConfigurationError(
                    "introduction window must end before the first sample date"
                )
            self.t_end = int(samples.date.max())
            rows, cols = samples.fine_cells(self.grid)
            self._rows, self._cols = rows, cols
            self._X = design.encode_many(samples.species.tolist())
            self._y = samples.y.astype(float)
        else:
            self.t_end = prior.t0_max
        self.names = parameter_names(design, self.z_layers, self.w_layers, config.n_events)

    # -- model evaluation ---------------------------------------------------

    def solve(self, state: ParameterState) -> IntensityTrajectory | None:
        """Fresh PDE solve for the state, or None when the data term is off."""
        if not self.use_likelihood:
            return None
        rates = make_rate_fields(
            state.alpha0, state.alpha, state.gamma0, state.gamma,
            self.covariates, self.z_layers, self.w_layers,
        )
        return solve_homogenized(
            state.events(), rates, self.t_end, self.config.steps_per_month
        )

    def log_lik(self, state: ParameterState, trajectory: IntensityTrajectory | None) -> float:
        if not self.use_likelihood:
            return 0.0
        u = trajectory.u_at(self._rows, self._cols, self.samples.date)
        p = probabilities(np.maximum(u, INTENSITY_FLOOR), self._X, state.beta)
        y = self._y
        return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))

    def log_post(self, state: ParameterState, trajectory: IntensityTrajectory | None) -> float:
        return self.log_lik(state, trajectory) + log_prior(state, self.prior, self.grid)

    def _try_solve(self, state: ParameterState):
        """Solve under a proposal; dynamics that blow up are treated as -inf."""
        try:
            traj = self.solve(state)
        except (NumericalBlowupError, DomainError) as e:
            log.debug("proposal rejected by solver: %s", e)
            return None, -math.inf, True
        return traj, self.log_lik(state, traj), False

    # -- update blocks ------------------------------------------------------

    def update_beta(
        self,
        state: ParameterState,
        trajectory: IntensityTrajectory | None,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Exact conjugate draw of beta given the latent truncated normals."""
        p = self.design.p
        prior_prec = np.eye(p) / self.prior.beta_sd**2
        if not self.use_likelihood:
            return rng.normal(0.0, self.prior.beta_sd, p)
        u = trajectory.u_at(self._rows, self._cols, self.samples.date)
        offset = np.log(np.maximum(u, INTENSITY_FLOOR))
        eta = offset + self._X @ state.beta
        lo = np.where(self._y == 1.0, -eta, -np.inf)
        hi = np.where(self._y == 1.0, np.inf, -eta)
        h = truncnorm.rvs(lo, hi, loc=eta, scale=1.0, random_state=rng)
        prec = self._X.T @ self._X + prior_prec
        mean = np.linalg.solve(prec, self._X.T @ (h - offset))
        chol = np.linalg.cholesky(prec)
        return mean + np.linalg.solve(chol.T, rng.standard_normal(p))

    def _metropolis(self, current_lp, proposal_lp, rng) -> bool:
        if proposal_lp == -math.inf:
            return False
        if current_lp == -math.inf:
            return True
        return math.log(rng.random()) < proposal_lp - current_lp

    def update_dynamics(self, state, trajectory, log_lik, rng, scales, counters):
        """Random-walk moves for the alpha block, gamma block, and each theta."""
        prior = self.prior

        def attempt(block, proposal, lp_cur, lp_new):
            traj_new, ll_new, blew = self._try_solve(proposal)
            counters.propose(block, blew)
            nonlocal state, trajectory, log_lik
            if self._metropolis(log_lik + lp_cur, ll_new + lp_new, rng):
                counters.accept(block)
                state, trajectory, log_lik = proposal, traj_new, ll_new

        q = len(state.alpha)
        step = scales["alpha"] * rng.standard_normal(1 + q)
        proposal = replace(state, alpha0=state.alpha0 + step[0], alpha=state.alpha + step[1:])
        attempt(
            "alpha",
            proposal,
            _normal_logpdf_sum(np.append(state.alpha, state.alpha0), 0.0, prior.alpha_gamma_sd),
            _normal_logpdf_sum(np.append(proposal.alpha, proposal.alpha0), 0.0, prior.alpha_gamma_sd),
        )

        r = len(state.gamma)
        step = scales["gamma"] * rng.standard_normal(1 + r)
        proposal = replace(state, gamma0=state.gamma0 + step[0], gamma=state.gamma + step[1:])
        attempt(
            "gamma",
            proposal,
            _normal_logpdf_sum(np.append(state.gamma, state.gamma0), 0.0, prior.alpha_gamma_sd),
            _normal_logpdf_sum(np.append(proposal.gamma, proposal.gamma0), 0.0, prior.alpha_gamma_sd),
        )

        for j in range(state.n_events):
            log_theta = math.log(state.theta[j])
            log_theta_new = log_theta + scales["log_theta"] * rng.standard_normal()
            if abs(log_theta_new) > 700.0:  # exp would overflow or underflow
                counters.propose("theta", False)
                continue
            theta_new = state.theta.copy()
            theta_new[j] = math.exp(log_theta_new)
            proposal = replace(state, theta=theta_new)
            attempt(
                "theta",
                proposal,
                _normal_logpdf_sum(log_theta, prior.log_theta_mean, prior.log_theta_sd),
                _normal_logpdf_sum(log_theta_new, prior.log_theta_mean, prior.log_theta_sd),
            )

        return state, trajectory, log_lik

    def update_introduction(self, state, trajectory, log_lik, rng, scales, counters):
        """Mixture move on (omega_j, t0) per source.

        Both mixture components are symmetric under the uniform priors, so
        the acceptance ratio reduces to the likelihood ratio; out-of-support
        proposals are rejected without a solve but still count.
        """
        prior = self.prior
        k = self.config.proposal_scales.t0_months
        for j in range(state.n_events):
            if rng.random() < LOCAL_MOVE_PROB:
                omega_j = state.omega[j] + scales["omega"] * rng.standard_normal(2)
                t0_new = state.t0 + int(rng.integers(-k, k + 1))
            else:
                omega_j = np.array(self.grid.sample_point_in_mask(rng))
                t0_new = int(rng.integers(prior.t0_min, prior.t0_max + 1))
            in_support = (
                prior.t0_min <= t0_new <= prior.t0_max
                and self.grid.contains(float(omega_j[0]), float(omega_j[1]))
            )
            if not in_support:
                counters.propose("introduction", False)
                continue
            omega_new = state.omega.copy()
            omega_new[j] = omega_j
            proposal = replace(state, omega=omega_new, t0=t0_new)
            traj_new, ll_new, blew = self._try_solve(proposal)
            counters.propose("introduction", blew)
            if self._metropolis(log_lik, ll_new, rng):
                counters.accept("introduction")
                state, trajectory, log_lik = proposal, traj_new, ll_new
        return state, trajectory, log_lik

    # -- chain driver -------------------------------------------------------

    def _initial_state(self, rng: np.random.Generator) -> tuple:
        # A prior draw can sit in a numerically hopeless corner (runaway
        # growth, sub-stepping past the cap); redraw until the posterior is
        # finite rather than starting a chain that cannot evaluate.
        for _ in range(100):
            state = draw_from_prior(
                self.prior, self.grid, rng,
                self.design.p, len(self.z_layers), len(self.w_layers),
                self.config.n_events,
            )
            traj, ll, blew = self._try_solve(state)
            if not blew:
                return state, traj, ll
        raise ConfigurationError("no finite-posterior initial state in 100 prior draws")

    def _sweep(self, state, traj, ll, rng, scales, counters):
        """One full update cycle: beta, dynamics blocks, introduction block."""
        beta = self.update_beta(state, traj, rng)
        state = replace(state, beta=beta)
        ll = self.log_lik(state, traj)
        state, traj, ll = self.update_dynamics(state, traj, ll, rng, scales, counters)
        state, traj, ll = self.update_introduction(state, traj, ll, rng, scales, counters)
        return state, traj, ll

    def _make_adapter(self, state, scales: dict | None = None) -> "_Adapter":
        cfg = self.config
        if scales is None:
            scales = {
                "alpha": cfg.proposal_scales.alpha,
                "gamma": cfg.proposal_scales.gamma,
                "log_theta": cfg.proposal_scales.log_theta,
                "omega": cfg.proposal_scales.omega_km,
            }
        return _Adapter(
            scales=scales,
            targets={
                "alpha": TARGET_BLOCK if len(state.alpha) else TARGET_SCALAR,
                "gamma": TARGET_BLOCK if len(state.gamma) else TARGET_SCALAR,
                "log_theta": TARGET_SCALAR,
                "omega": TARGET_BLOCK,
            },
        )

    def _tournament(self, rng: np.random.Generator):
        """Pick the best of ``n_starts`` pilot lineages by posterior density.

        Each lineage begins at a fresh prior draw and runs
        ``pilot_iterations`` adapted sweeps; everything here is burn-in, so
        the selection only decides where burn-in proper continues from.
        """
        cfg = self.config
        best = None
        for _ in range(cfg.n_starts):
            state, traj, ll = self._initial_state(rng)
            adapter = self._make_adapter(state)
            counters = _Counters()
            for _ in range(cfg.pilot_iterations):
                before = counters.snapshot()
                state, traj, ll = self._sweep(
                    state, traj, ll, rng, adapter.scales, counters
                )
                if cfg.adapt:
                    adapter.step(before, counters)
            lp = ll + log_prior(state, self.prior, self.grid)
            if best is None or lp > best[0]:
                best = (lp, state, traj, ll, dict(adapter.scales))
        return best[1], best[2], best[3], best[4]

    def run_chain(self, chain_id: int, seed: np.random.SeedSequence) -> ChainOutput:
        rng = np.random.default_rng(seed)
        cfg = self.config
        if cfg.n_starts > 1:
            state, traj, ll, scales = self._tournament(rng)
            adapter = self._make_adapter(state, scales)
        else:
            state, traj, ll = self._initial_state(rng)
            adapter = self._make_adapter(state)
        counters = _Counters()
        n_keep = cfg.n_retained
        draws = np.empty((n_keep, len(self.names)))
        log_post_trace = np.empty(n_keep)
        iters = np.empty(n_keep, dtype=int)
        kept = 0
        for it in range(1, cfg.n_iterations + 1):
            before = counters.snapshot()
            state, traj, ll = self._sweep(
                state, traj, ll, rng, adapter.scales, counters
            )
            if cfg.adapt and it <= cfg.n_burnin:
                adapter.step(before, counters)

            if it > cfg.n_burnin and (it - cfg.n_burnin) % cfg.thin == 0 and kept < n_keep:
                draws[kept] = _state_to_vector(state)
                log_post_trace[kept] = ll + log_prior(state, self.prior, self.grid)
                iters[kept] = it
                kept += 1
        acceptance = counters.rates()
        acceptance["beta"] = 1.0  # exact Gibbs draw
        for block, rate in acceptance.items():
            if rate == 0.0 and block != "beta":
                log.warning("chain %d: block %r accepted nothing", chain_id, block)
        return ChainOutput(
            chain_id=chain_id,
            names=list(self.names),
            draws=draws[:kept],
            log_post=log_post_trace[:kept],
            iters=iters[:kept],
            acceptance=acceptance,
            final_scales=dict(adapter.scales),
            rejected_blowups=counters.blowups,
            species=list(self.design.species_order),
            z_layers=list(self.z_layers),
            w_layers=list(self.w_layers),
            n_events=cfg.n_events,
        )

    def run(self, threads: int = 1) -> list[ChainOutput]:
        seeds = np.random.SeedSequence(self.config.seed).spawn(self.config.n_chains)
        if threads > 1 and self.config.n_chains > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [
                    pool.submit(self.run_chain, c, seeds[c])
                    for c in range(self.config.n_chains)
                ]
                return [f.result() for f in futures]
        return [self.run_chain(c, seeds[c]) for c in range(self.config.n_chains)]


class _Counters:
    """Per-block proposal/acceptance tallies; blowups count as proposals."""

    def __init__(self):
        self.proposed: dict[str, int] = {}
        self.accepted: dict[str, int] = {}
        self.blowups = 0

    def propose(self, block: str, blew_up: bool) -> None:
        self.proposed[block] = self.proposed.get(block, 0) + 1
        if blew_up:
            self.blowups += 1

    def accept(self, block: str) -> None:
        self.accepted[block] = self.accepted.get(block, 0) + 1

    def snapshot(self) -> tuple[dict[str, int], dict[str, int]]:
        return dict(self.proposed), dict(self.accepted)

    def rates(self) -> dict[str, float]:
        return {
            b: self.accepted.get(b, 0) / n for b, n in self.proposed.items() if n > 0
        }


class _Adapter:
    """Robbins-Monro adjustment of log proposal scales toward target rates."""

    GAIN = 1.5
    DECAY = 0.7
    BLOCK_OF = {"alpha": "alpha", "gamma": "gamma", "log_theta": "theta", "omega": "introduction"}

    def __init__(self, scales: dict[str, float], targets: dict[str, float]):
        self.scales = dict(scales)
        self.targets = targets
        self.t = 0

    def step(self, before: tuple[dict, dict], counters: _Counters) -> None:
        self.t += 1
        gain = self.GAIN / self.t**self.DECAY
        proposed0, accepted0 = before
        for name, block in self.BLOCK_OF.items():
            n = counters.proposed.get(block, 0) - proposed0.get(block, 0)
            if n == 0:
                continue
            a = counters.accepted.get(block, 0) - accepted0.get(block, 0)
            updated = math.log(self.scales[name]) + gain * (a / n - self.targets[name])
            self.scales[name] = math.exp(min(max(updated, -12.0), 12.0))


def run_mcmc(
    samples: SampleSet,
    covariates: CovariateRaster,
    prior: PriorSpec,
    config: MCMCConfig,
    design: SusceptibilityDesign | None = None,
    z_layers: Sequence[str] | None = None,
    w_layers: Sequence[str] | None = None,
    threads: int = 1,
) -> list[ChainOutput]:
    """Fit the full model; returns one ChainOutput per chain."""
    sampler = GibbsSampler(
        samples, covariates, prior, config,
        design=design, z_layers=z_layers, w_layers=w_layers,
    )
    return sampler.run(threads=threads)


# -- chain files ------------------------------------------------------------


def write_chains_csv(path: str | os.PathLike, chains: Sequence[ChainOutput]) -> None:
    """All chains in one file, one row per retained draw."""
    if not chains:
        raise ConfigurationError("no chains to write")
    names = chains[0].names
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names + CHAIN_TAIL)
        for chain in chains:
            if chain.names != names:
                raise ConfigurationError("chains disagree on parameter columns")
            t0_col = chain.names.index("t0")
            for i in range(len(chain.draws)):
                row = []
                for k, v in enumerate(chain.draws[i]):
                    row.append(str(int(round(v))) if k == t0_col else repr(float(v)))
                row += [repr(float(chain.log_post[i])), str(chain.chain_id), str(int(chain.iters[i]))]
                w.writerow(row)


def _names_to_meta(names: list[str]) -> tuple[list[str], list[str], list[str], int]:
    species = [n[len("beta_"):] for n in names if n.startswith("beta_")]
    z_layers = [n[len("alpha_"):] for n in names if n.startswith("alpha_") and n != "alpha0"]
    w_layers = [n[len("gamma_"):] for n in names if n.startswith("gamma_") and n != "gamma0"]
    n_events = sum(1 for n in names if n == "theta" or n.startswith("theta_"))
    return species, z_layers, w_layers, max(n_events, 1)


def read_chains_csv(path: str | os.PathLike) -> list[ChainOutput]:
    """Rebuild per-chain outputs from a chain CSV (acceptance data is gone)."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header is None or header[-3:] != CHAIN_TAIL:
            raise ConfigurationError(f"{path}: not a chain file")
        names = header[:-3]
        rows = [row for row in r if row]
    species, z_layers, w_layers, n_events = _names_to_meta(names)
    by_chain: dict[int, list[list[str]]] = {}
    for row in rows:
        by_chain.setdefault(int(row[-2]), []).append(row)
    chains = []
    for chain_id in sorted(by_chain):
        block = by_chain[chain_id]
        draws = np.array([[float(v) for v in row[: len(names)]] for row in block])
        chains.append(
            ChainOutput(
                chain_id=chain_id,
                names=list(names),
                draws=draws,
                log_post=np.array([float(row[-3]) for row in block]),
                iters=np.array([int(row[-1]) for row in block]),
                acceptance={},
                final_scales={},
                rejected_blowups=0,
                species=species,
                z_layers=z_layers,
                w_layers=w_layers,
                n_events=n_events,
            )
        )
    return chains


def states_from_chains(chains: Sequence[ChainOutput]) -> list[ParameterState]:
    """All retained draws across chains, in chain order."""
    states: list[ParameterState] = []
    for chain in chains:
        states.extend(chain.states())
    return states
