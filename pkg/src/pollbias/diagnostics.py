"""Convergence diagnostics: split R-hat and rank-normalised bulk ESS."""
from __future__ import annotations

import warnings

import numpy as np
from scipy import stats

RHAT_FLAG = 1.05


def split_chains(draws: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2 * chains, n // 2); drops the middle draw if n is odd."""
    draws = np.asarray(draws, dtype=float)
    half = draws.shape[1] // 2
    return np.vstack([draws[:, :half], draws[:, draws.shape[1] - half:]])


def _rhat(chains: np.ndarray) -> float:
    m, n = chains.shape
    within = chains.var(axis=1, ddof=1).mean()
    between = n * chains.mean(axis=1).var(ddof=1)
    if within == 0:
        return float("nan")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def split_rhat(draws: np.ndarray) -> float:
    """Split potential scale reduction for a (chains, draws) array."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] < 4:
        raise ValueError("need a (chains, draws) array with at least 4 draws per chain")
    return _rhat(split_chains(draws))


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def ess(draws: np.ndarray) -> float:
    """Multi-chain effective sample size (Geyer initial monotone sequence)."""
    draws = np.asarray(draws, dtype=float)
    m, n = draws.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    acov = np.array([autocovariance(c) for c in draws])
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += draws.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float("nan")
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 2 and even + odd >= 0.0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = even
        if even + odd >= 0.0:
            rho[t + 2] = odd
        t += 2
    max_t = t
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def rank_normalize(draws: np.ndarray) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    ranks = stats.rankdata(draws, method="average").reshape(draws.shape)
    return stats.norm.ppf((ranks - 0.375) / (draws.size + 0.25))


def ess_bulk(draws: np.ndarray) -> float:
    draws = np.asarray(draws, dtype=float)
    if np.ptp(draws) == 0:
        return float("nan")
    return ess(rank_normalize(split_chains(draws)))


def summarize_chains(values: np.ndarray, names: list[str]) -> dict[str, dict]:
    """Per-parameter diagnostics for ``values`` shaped (chains, draws, params)."""
    values = np.asarray(values, dtype=float)
    chains, n, dim = values.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    if chains < 2:
        warnings.warn("single chain: R-hat omitted", RuntimeWarning, stacklevel=2)
    out = {}
    for k, name in enumerate(names):
        x = values[:, :, k]
        constant = np.ptp(x) == 0
        rhat = None if chains < 2 or constant else split_rhat(x)
        out[name] = {
            "mean": float(x.mean()),
            "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "rhat": rhat,
            "ess_bulk": None if constant else ess_bulk(x),
        }
    return out


def run_summary(report: dict[str, dict], threshold: float = RHAT_FLAG) -> dict:
    rhats = {k: v["rhat"] for k, v in report.items() if v["rhat"] is not None}
    esses = [v["ess_bulk"] for v in report.values() if v["ess_bulk"] is not None]
    flagged = sorted(k for k, r in rhats.items() if not r <= threshold)
    return {
        "max_rhat": max(rhats.values()) if rhats else None,
        "min_ess_bulk": min(esses) if esses else None,
        "rhat_threshold": threshold,
        "flagged": flagged,
        "converged": not flagged,
    }
