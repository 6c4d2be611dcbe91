"""Convergence diagnostics for chain output.

Split R-hat follows the usual recipe: halve each chain, compare
between-half and within-half variance.  Effective sample size truncates the
autocorrelation sum at the first negative pair, which keeps the estimate
positive and consistent for reversible chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mcmc import ChainOutput


def split_rhat(sequences: Sequence[np.ndarray]) -> float:
    """Potential scale reduction over split chains; nan when degenerate."""
    halves = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=float)
        m = len(seq) // 2
        if m < 2:
            return math.nan
        halves.append(seq[:m])
        halves.append(seq[len(seq) - m :])
    n = min(len(h) for h in halves)
    halves = np.array([h[:n] for h in halves])
    within = halves.var(axis=1, ddof=1).mean()
    if within == 0.0 or not np.isfinite(within):
        return math.nan
    between = n * halves.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


def ess(x: np.ndarray) -> float:
    """Effective sample size of one chain.

    The integrated autocorrelation time sums lag pairs (2k, 2k+1) and stops
    at the first negative pair sum.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return math.nan
    centered = x - x.mean()
    if not centered.any():
        return math.nan
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0.0:
            break
        tau += 2.0 * pair
    return n / max(tau, 1.0 / n)


@dataclass
class ChainDiagnostics:
    rhat: dict[str, float]
    ess: dict[str, float]
    acceptance: dict[int, dict[str, float]]
    warnings: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = ["parameter  r_hat  ess"]
        for name in self.ess:
            r = self.rhat.get(name)
            r_txt = "-" if r is None else ("nan" if math.isnan(r) else f"{r:.4f}")
            e = self.ess[name]
            e_txt = "nan" if math.isnan(e) else f"{e:.1f}"
            lines.append(f"{name}  {r_txt}  {e_txt}")
        for chain_id in sorted(self.acceptance):
            rates = self.acceptance[chain_id]
            parts = ", ".join(f"{b}={rates[b]:.3f}" for b in sorted(rates))
            lines.append(f"chain {chain_id} acceptance: {parts}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def chain_diagnostics(chains: Sequence[ChainOutput]) -> ChainDiagnostics:
    """Per-parameter split R-hat and ESS plus per-chain acceptance rates."""
    if not chains:
        raise ValueError("no chains")
    names = chains[0].names
    warnings: list[str] = []
    rhat: dict[str, float] = {}
    ess_totals: dict[str, float] = {}
    if len(chains) < 2:
        warnings.append("single chain: split R-hat omitted")
    for name in names:
        series = [c.column(name) for c in chains]
        if len(chains) >= 2:
            r = split_rhat(series)
            rhat[name] = r
            if math.isnan(r):
                warnings.append(f"{name}: R-hat undefined (zero within-chain variance)")
        per_chain = [ess(s) for s in series]
        if any(math.isnan(e) for e in per_chain):
            ess_totals[name] = math.nan
            warnings.append(f"{name}: ESS undefined for at least one chain")
        else:
            ess_totals[name] = float(sum(per_chain))
    acceptance = {c.chain_id: dict(c.acceptance) for c in chains}
    for c in chains:
        for block, rate in c.acceptance.items():
            if rate == 0.0:
                warnings.append(f"chain {c.chain_id}: block {block!r} accepted nothing")
    return ChainDiagnostics(rhat=rhat, ess=ess_totals, acceptance=acceptance, warnings=warnings)
