"""Convergence diagnostics: split R-hat and effective sample size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Diagnostics:
    rhat: dict[str, float]
    ess: dict[str, float]
    acceptance: dict[str, float]

    def max_rhat(self):
        return max(self.rhat.values()) if self.rhat else 1.0


def split_rhat(chains):
    """Potential scale reduction factor over half-split chains.

    Returns 1.0 for parameters with no variation (e.g. a point-mass cutoff).
    """
    halves = []
    for ch in chains:
        ch = np.asarray(ch, dtype=float)
        m = ch.size // 2
        halves.extend([ch[:m], ch[m:2 * m]])
    seqs = np.asarray(halves)
    n = seqs.shape[1]
    if n < 2:
        return np.nan
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    w = variances.mean()
    b = n * means.var(ddof=1)
    if w <= 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocovariance(x):
    n = x.size
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def effective_sample_size(chains):
    """Multi-chain ESS via Geyer's initial monotone positive sequence."""
    seqs = [np.asarray(ch, dtype=float) for ch in chains]
    n = min(s.size for s in seqs)
    seqs = np.asarray([s[:n] for s in seqs])
    m = seqs.shape[0]
    if n < 4:
        return float(m * n)
    chain_vars = seqs.var(axis=1, ddof=1)
    w = chain_vars.mean()
    if w <= 0:
        return float(m * n)
    var_plus = (n - 1) / n * w
    if m > 1:
        var_plus += seqs.mean(axis=1).var(ddof=1)
    acov = np.asarray([_autocovariance(s) for s in seqs]).mean(axis=0)
    rho = 1.0 - (w - acov) / var_plus
    # Geyer: sum consecutive-pair autocorrelations while positive and monotone
    tau = 1.0
    prev_pair = np.inf
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau += 2.0 * pair
    return float(min(m * n / tau, m * n))
