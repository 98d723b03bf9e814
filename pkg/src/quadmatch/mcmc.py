"""Convergence diagnostics for MCMC output.

Rank-normalized split R-hat, bulk effective sample size and tail effective
sample size, following the definitions of Vehtari, Gelman, Simpson,
Carpenter and Buerkner (2021). Draws are arrays of shape (chains, draws).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half, dropping the middle draw when the length is odd."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    half = n // 2
    return np.vstack([x[:, :half], x[:, n - half:]])


def z_scale(x: np.ndarray) -> np.ndarray:
    """Normal scores of the pooled ranks (average ties, Blom offset 3/8)."""
    x = np.asarray(x, dtype=float)
    r = stats.rankdata(x, method="average").reshape(x.shape)
    size = x.size
    return stats.norm.ppf((r - 0.375) / (size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    chains, n = x.shape
    if n < 2 or chains < 2:
        return math.nan
    w = float(np.mean(np.var(x, axis=1, ddof=1)))
    if w == 0.0:
        return math.nan
    b_over_n = float(np.var(np.mean(x, axis=1), ddof=1))
    return math.sqrt(((n - 1) / n * w + b_over_n) / w)


def rhat(x) -> float:
    """Rank-normalized split R-hat: the larger of the bulk and folded versions."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.ptp(x) == 0:
        return math.nan
    bulk = _rhat_basic(z_scale(split_chains(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat_basic(z_scale(split_chains(folded)))
    return max(bulk, tail)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance (divisor n) of each row, via FFT."""
    n = x.shape[1]
    y = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def ess_basic(x: np.ndarray) -> float:
    """Effective sample size of multi-chain draws using Geyer's initial monotone sequence."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    chains, n = x.shape
    if n < 4 or np.ptp(x) == 0:
        return math.nan
    acov = _autocovariance(x)
    mean_var = float(np.mean(acov[:, 0])) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if chains > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    mean_acov = acov.mean(axis=0)

    rho = np.zeros(n)
    t = 0
    even = 1.0
    rho[0] = even
    odd = 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = odd
    while t < n - 5 and even + odd > 0:
        t += 2
        even = 1.0 - (mean_var - mean_acov[t]) / var_plus
        odd = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        if even + odd >= 0:
            rho[t] = even
            rho[t + 1] = odd
    max_t = t
    if even > 0:
        rho[max_t] = even
    # enforce a monotone sequence of paired autocorrelations
    t = 0
    while t <= max_t - 4:
        t += 2
        if rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1]:
            rho[t] = rho[t + 1] = (rho[t - 2] + rho[t - 1]) / 2
    total = chains * n
    tau = -1.0 + 2.0 * float(np.sum(rho[:max_t])) + rho[max_t]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess_bulk(x) -> float:
    return ess_basic(z_scale(split_chains(x)))


def ess_tail(x) -> float:
    """Smaller of the ESS for the 5% and 95% quantile indicators."""
    x = split_chains(x)
    lo, hi = np.quantile(x, [0.05, 0.95])
    return min(ess_basic((x <= lo).astype(float)), ess_basic((x <= hi).astype(float)))


def mcse_mean(x) -> float:
    """Monte Carlo standard error of the posterior mean estimate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.std(x, ddof=1)) / math.sqrt(ess_basic(split_chains(x)))
