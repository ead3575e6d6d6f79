"""
Autocovariance, integrated autocorrelation time and error combination.

The correlation time uses the self-consistent window: tau(W) = 1 + 2/c0 *
sum_{t=1..W} C_t, with W the smallest window satisfying W >= c * tau(W).
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import fft
from scipy import stats as sp_stats

from manifolds.exceptions import DegenerateSeriesError, DomainError

logger = logging.getLogger(__name__)

WINDOW_CONSTANT = 5.0
MIN_SERIES_LENGTH = 100


@dataclass(frozen=True)
class ACTEstimate:
    tau: float
    window: int
    c0: float
    # 'static' when the caller supplied the variance, 'sample' for C_0
    c0_source: str
    n: int


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    stderr: float
    tau: float
    n: int

    def within(self, expected: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - expected) <= n_se * self.stderr


def autocovariance(series: Sequence[float], t: int) -> float:
    """C_t = 1/(n-t) sum_j (F_j - mean)(F_{j+t} - mean), with C_{-t} = C_t."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    t = abs(int(t))
    if t >= n:
        raise DomainError(f"lag {t} out of range for series of length {n}")
    dev = x - x.mean()
    return float(dev[: n - t] @ dev[t:] / (n - t))


def autocovariances(series: Sequence[float], max_lag: int) -> np.ndarray:
    """C_0..C_max_lag for the same estimator as autocovariance, via FFT."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if not 0 <= max_lag < n:
        raise DomainError(f"max_lag {max_lag} out of range for series of length {n}")
    dev = x - x.mean()
    size = fft.next_fast_len(2 * n)
    spectrum = fft.rfft(dev, size)
    raw = fft.irfft(spectrum * np.conj(spectrum), size)[: max_lag + 1]
    return raw / (n - np.arange(max_lag + 1))


def integrated_act(
    series: Sequence[float],
    static_c0: Optional[float] = None,
    c: float = WINDOW_CONSTANT,
) -> ACTEstimate:
    """
    Integrated autocorrelation time with a self-consistent window.

    static_c0 replaces C_0 in the normalization (for indicator series the
    Bernoulli variance p(1-p)). The window is capped at n // 10 and tau is
    clipped below at 1.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < MIN_SERIES_LENGTH:
        raise DomainError(f"series of length {n} is too short (need >= {MIN_SERIES_LENGTH})")

    w_cap = n // 10
    C = autocovariances(x, w_cap)
    if static_c0 is not None:
        c0, source = float(static_c0), 'static'
    else:
        c0, source = float(C[0]), 'sample'
    if not c0 > 0 or C[0] <= 0:
        raise DegenerateSeriesError(f"series has zero variance (c0={c0:g})")

    windows = np.arange(1, w_cap + 1)
    taus = 1.0 + 2.0 * np.cumsum(C[1:]) / c0
    consistent = np.nonzero(windows >= c * taus)[0]
    idx = int(consistent[0]) if consistent.size else w_cap - 1
    tau = max(float(taus[idx]), 1.0)
    return ACTEstimate(tau=tau, window=int(windows[idx]), c0=c0, c0_source=source, n=n)


def mean_with_error(series: Sequence[float]) -> MeanEstimate:
    """Sample mean with the tau-corrected standard error sqrt(C_0 tau / n)."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    try:
        act = integrated_act(x)
        tau, c0 = act.tau, act.c0
    except DegenerateSeriesError:
        tau, c0 = 1.0, 0.0
    return MeanEstimate(mean=float(x.mean()), stderr=math.sqrt(c0 * tau / n), tau=tau, n=n)


def combine_error(rho_k: float, stages: Iterable[Tuple[float, float, int]]) -> float:
    """sigma_r = sqrt(rho_k^2 + sum (1 - p_i) tau_i / (n_i p_i))."""
    total = float(rho_k) ** 2
    for p, tau, n in stages:
        if not 0 < p <= 1:
            raise DomainError(f"stage probability must lie in (0, 1], got {p}")
        if n < 1:
            raise DomainError(f"stage length must be >= 1, got {n}")
        if tau < 0:
            raise DomainError(f"correlation time must be non-negative, got {tau}")
        total += (1.0 - p) * tau / (n * p)
    return math.sqrt(total)


def histogram_pvalue(values: Sequence[float], edges: np.ndarray, bin_probs: np.ndarray, tau: float = 1.0):
    """
    Chi-square goodness of fit of a histogram against exact bin probabilities.

    Correlated samples inflate the statistic by roughly tau, so it is divided
    by tau before the p-value is taken. Returns (counts, statistic, p_value).
    """
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
    probs = np.asarray(bin_probs, dtype=float)
    probs = probs / probs.sum()
    expected = probs * counts.sum()
    statistic, _ = sp_stats.chisquare(counts, expected)
    statistic = float(statistic) / max(tau, 1.0)
    p_value = float(sp_stats.chi2.sf(statistic, df=len(counts) - 1))
    return counts, statistic, p_value
