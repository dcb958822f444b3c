"""Autocorrelation, effective sample size and cross-correlation of chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AcfResult:
    lags: np.ndarray
    values: np.ndarray

    def as_dict(self) -> dict:
        return {"lags": self.lags.tolist(), "values": self.values.tolist()}


def _centered(series, name="series"):
    x = np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    xc = x - x.mean()
    if not np.any(xc):
        raise ValueError(f"{name} has zero variance")
    return xc


def _autocov(xc):
    n = xc.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def acf(series, max_lag: int) -> AcfResult:
    """Biased sample autocorrelation at lags ``0..max_lag``."""
    xc = _centered(series)
    if max_lag < 0 or xc.size <= max_lag:
        raise ValueError(f"need 0 <= max_lag < len(series), got {max_lag}")
    g = _autocov(xc)
    return AcfResult(np.arange(max_lag + 1), g[: max_lag + 1] / g[0])


def integrated_autocorr_time(series) -> float:
    """Geyer initial-positive-sequence estimate of ``1 + 2 sum_l rho_l``."""
    xc = _centered(series)
    g = _autocov(xc)
    rho = g / g[0]
    n = rho.size
    tau = -1.0
    for m in range(0, n - 1, 2):
        pair = rho[m] + rho[m + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return max(tau, 1.0 / n)


def ess(series) -> float:
    """Effective sample size ``n / (1 + 2 sum_l rho_l)``."""
    n = np.asarray(series).size
    return n / integrated_autocorr_time(series)


def mcse(series) -> float:
    """Monte Carlo standard error of the series mean."""
    x = np.asarray(series, dtype=float)
    return float(np.std(x) / np.sqrt(ess(x)))


def cross_correlation(series_a, series_b, max_lag: int) -> AcfResult:
    """Sample cross-correlation ``corr(a_t, b_{t+h})`` for ``h = -max_lag..max_lag``.

    Both series are centered by their own means and the lag-h products are
    summed over the overlap and divided by ``n`` (biased normalization).
    """
    a = _centered(series_a, "series_a")
    b = _centered(series_b, "series_b")
    if a.size != b.size:
        raise ValueError("series must have equal length")
    n = a.size
    if max_lag < 0 or max_lag >= n:
        raise ValueError(f"need 0 <= max_lag < len(series), got {max_lag}")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    full = np.fft.irfft(np.conj(np.fft.rfft(a, nfft)) * np.fft.rfft(b, nfft), nfft)
    # full[h] = sum_t a_t b_{t+h}; negative lags wrap to the end
    lags = np.arange(-max_lag, max_lag + 1)
    vals = full[lags % nfft] / n
    return AcfResult(lags, vals / np.sqrt(np.dot(a, a) / n * np.dot(b, b) / n))


def summarize(samples, labels, seconds_per_1000=None) -> dict:
    """Mean, sd, ESS (and ESS per second) of every monitored column."""
    samples = np.asarray(samples, dtype=float)
    out = {}
    for j, lab in enumerate(labels):
        col = samples[:, j]
        row = {"mean": float(col.mean()), "sd": float(col.std())}
        try:
            row["ess"] = float(ess(col))
        except ValueError:
            row["ess"] = None
        if seconds_per_1000 and np.isfinite(seconds_per_1000) and row["ess"] is not None:
            seconds = seconds_per_1000 * samples.shape[0] / 1000.0
            row["ess_per_second"] = row["ess"] / seconds
        out[lab] = row
    return out


def bivariate_gibbs(rho: float, n: int, seed: int = 0) -> np.ndarray:
    """Two-component Gibbs chain on a standard bivariate Gaussian.

    Returns an ``(n, 2)`` array of ``(x, y)`` states; ``y - rho x`` is
    independent of ``x`` under the target but not along the chain.
    """
    rng = np.random.default_rng(seed)
    s = np.sqrt(1 - rho * rho)
    ex = rng.standard_normal(n) * s
    ey = rng.standard_normal(n) * s
    out = np.empty((n, 2))
    x = y = 0.0
    for t in range(n):
        x = rho * y + ex[t]
        y = rho * x + ey[t]
        out[t] = x, y
    return out
