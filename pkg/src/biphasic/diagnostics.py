"""Convergence diagnostics: split-chain R-hat with an F-based upper bound, pooled ESS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

RHAT_THRESHOLD = 1.1
ESS_THRESHOLD = 200.0


class DegenerateChainError(ValueError):
    """Chains with zero variance; R-hat and ESS are undefined."""


def _as_chains(chains, min_length: int = 10) -> np.ndarray:
    arr = np.asarray([np.asarray(c, dtype=float) for c in chains])
    if arr.ndim != 2:
        raise ValueError("chains must be equal-length 1-D sequences")
    if arr.shape[0] < 2:
        raise ValueError("at least two chains are required")
    if arr.shape[1] < min_length:
        raise ValueError(f"chains must have at least {min_length} draws, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("chains contain non-finite values")
    return arr


def split_chains(chains: np.ndarray) -> np.ndarray:
    """Halve every chain; an odd middle draw is dropped."""
    n = chains.shape[1]
    h = n // 2
    return np.concatenate([chains[:, :h], chains[:, n - h :]], axis=0)


def r_hat(chains: Sequence, split: bool = True, confidence: float = 0.95) -> tuple[float, float]:
    """Potential scale reduction factor and its upper confidence limit.

    The point estimate and the upper limit follow Gelman & Rubin (1992) with the
    Brooks-Gelman degrees-of-freedom correction, computed on split chains.
    """
    x = _as_chains(chains)
    if split:
        x = split_chains(x)
    m, n = x.shape
    xbar = x.mean(axis=1)
    s2 = x.var(axis=1, ddof=1)
    w = s2.mean()
    if w <= 0:
        raise DegenerateChainError("zero within-chain variance")
    b = n * xbar.var(ddof=1)
    muhat = xbar.mean()

    var_w = s2.var(ddof=1) / m
    var_b = 2.0 * b * b / (m - 1)
    cov_wb = (n / m) * (
        np.cov(s2, xbar * xbar, ddof=1)[0, 1] - 2.0 * muhat * np.cov(s2, xbar, ddof=1)[0, 1]
    )
    V = (n - 1) / n * w + (1 + 1 / m) * b / n
    var_V = ((n - 1) ** 2 * var_w + (1 + 1 / m) ** 2 * var_b
             + 2 * (n - 1) * (1 + 1 / m) * cov_wb) / n**2
    df_adj = 1.0 if var_V <= 0 else (2 * V * V / var_V + 3) / (2 * V * V / var_V + 1)

    r2_fixed = (n - 1) / n
    r2_random = (1 + 1 / m) * (1 / n) * (b / w)
    q = (1 + confidence) / 2
    if var_w > 0:
        f_q = stats.f.ppf(q, m - 1, 2 * w * w / var_w)
    else:
        f_q = stats.chi2.ppf(q, m - 1) / (m - 1)
    point = np.sqrt(df_adj * (r2_fixed + r2_random))
    upper = np.sqrt(df_adj * (r2_fixed + f_q * r2_random))
    return float(point), float(upper)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation of one chain at all lags (FFT)."""
    n = x.size
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f), 2 * n)[:n] / n
    if acov[0] <= 0:
        raise DegenerateChainError("zero-variance chain")
    return acov / acov[0]


def integrated_time(rho: np.ndarray) -> float:
    """1 + 2 * sum(rho_k), truncated by Geyer's initial monotone positive sequence."""
    n_pairs = rho.size // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    return max(-1.0 + 2.0 * total, 1.0 / np.log10(max(rho.size, 10)))


def ess(chains: Sequence) -> float:
    """Pooled effective sample size from chain-averaged autocorrelations."""
    x = _as_chains(chains)
    rho = np.mean([autocorrelation(c) for c in x], axis=0)
    return float(x.size / integrated_time(rho))


@dataclass
class ConvergenceReport:
    names: list[str]
    r_hat: np.ndarray
    r_hat_upper95: np.ndarray
    ess: np.ndarray
    iterations_used: int = 0
    rhat_threshold: float = RHAT_THRESHOLD
    ess_threshold: float = ESS_THRESHOLD
    reasons: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.reasons

    def rows(self):
        for i, name in enumerate(self.names):
            yield name, float(self.r_hat[i]), float(self.r_hat_upper95[i]), float(self.ess[i])

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "iterations_used": self.iterations_used,
            "rhat_threshold": self.rhat_threshold,
            "ess_threshold": self.ess_threshold,
            "reasons": list(self.reasons),
            "parameters": [
                {"parameter": n, "r_hat": r, "r_hat_upper95": u, "ess": e}
                for n, r, u, e in self.rows()
            ],
        }


def gate(
    names: Sequence[str],
    r_hats,
    r_hat_uppers,
    esses,
    rhat_threshold: float = RHAT_THRESHOLD,
    ess_threshold: float = ESS_THRESHOLD,
    iterations_used: int = 0,
) -> ConvergenceReport:
    """Pass iff every parameter has R-hat <= rhat_threshold and ESS >= ess_threshold."""
    r_hats = np.asarray(r_hats, dtype=float)
    uppers = np.asarray(r_hat_uppers, dtype=float)
    esses = np.asarray(esses, dtype=float)
    if not (len(names) == r_hats.size == uppers.size == esses.size):
        raise ValueError("one R-hat, upper bound and ESS per parameter is required")
    reasons = []
    for name, r, e in zip(names, r_hats, esses):
        if not r <= rhat_threshold:
            reasons.append(f"{name}: r_hat {r:.4g} > {rhat_threshold:g}")
        if not e >= ess_threshold:
            reasons.append(f"{name}: ess {e:.4g} < {ess_threshold:g}")
    return ConvergenceReport(
        list(names), r_hats, uppers, esses, iterations_used, rhat_threshold, ess_threshold, reasons
    )


def diagnose(chains: Sequence[np.ndarray], names: Sequence[str], **gate_kw) -> ConvergenceReport:
    """Diagnostics for every column of a list of (draw, parameter) arrays.

    A degenerate parameter gets R-hat = inf and ESS = 0 rather than an exception,
    so the gate reports it as a failure.
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    rh, up, es = [], [], []
    for j in range(len(names)):
        cols = [c[:, j] for c in chains]
        try:
            point, upper = r_hat(cols)
            e = ess(cols)
        except DegenerateChainError:
            point, upper, e = np.inf, np.inf, 0.0
        rh.append(point)
        up.append(upper)
        es.append(e)
    return gate(names, rh, up, es, **gate_kw)
