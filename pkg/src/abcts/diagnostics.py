"""Trace diagnostics: autocorrelation, effective sample size, KDE, summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stochastics import DomainError


@dataclass(frozen=True)
class AcfResult:
    lags: np.ndarray
    acf: np.ndarray
    n: int


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def _autocov(x):
    n = len(x)
    d = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(d, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def autocorrelation(series, max_lag):
    """Biased ACF ``c_k / c_0`` with lag-k autocovariance divided by n."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if not 1 <= max_lag < n:
        raise DomainError(f"need 1 <= max_lag < n, got max_lag={max_lag}, n={n}")
    c = _autocov(x)
    if not c[0] > 0:
        raise DomainError("autocorrelation of a constant series is undefined")
    rho = np.clip(c[: max_lag + 1] / c[0], -1.0, 1.0)
    rho[0] = 1.0
    return AcfResult(np.arange(max_lag + 1), rho, n)


def ess(series):
    """``n / (1 + 2 sum rho_k)``, summing lags until the first non-positive autocorrelation."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 2:
        raise DomainError("ESS needs at least two values")
    c = _autocov(x)
    if not c[0] > 0:
        raise DomainError("ESS of a constant series is undefined")
    rho = c[1:] / c[0]
    stop = np.flatnonzero(rho <= 0)
    k = stop[0] if stop.size else len(rho)
    return float(n / (1.0 + 2.0 * rho[:k].sum()))


def silverman_bandwidth(samples):
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * len(x) ** -0.2


def kde(samples, grid, bandwidth="silverman", allow_single=False):
    """Gaussian kernel density on ``grid``; ``bandwidth`` is ``"silverman"`` or a positive number."""
    x = np.asarray(samples, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if len(x) < 2 and not (allow_single and len(x) == 1 and bandwidth != "silverman"):
        raise DomainError("kde needs at least two samples")
    h = silverman_bandwidth(x) if bandwidth == "silverman" else float(bandwidth)
    if not h > 0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    dens = np.zeros_like(grid)
    for lo in range(0, len(x), 4096):
        z = (grid[:, None] - x[None, lo:lo + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= len(x) * h * np.sqrt(2 * np.pi)
    return DensityEstimate(grid, dens, h)


def kde_grid(samples, bandwidth, points=512, pad=5.0):
    x = np.asarray(samples, dtype=float)
    return np.linspace(x.min() - pad * bandwidth, x.max() + pad * bandwidth, points)


def summarize(trace):
    """Per-parameter mean, sd, 5/50/95% quantiles and ESS, plus the acceptance rate.

    ESS is ``None`` for a parameter that never moved.
    """
    if len(trace) == 0:
        raise DomainError("empty trace")
    params = {}
    for j, name in enumerate(trace.param_names):
        col = trace.draws[:, j]
        q05, q50, q95 = np.quantile(col, [0.05, 0.5, 0.95])
        try:
            e = ess(col)
        except DomainError:
            e = None
        params[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
            "q05": float(q05),
            "q50": float(q50),
            "q95": float(q95),
            "ess": e,
        }
    return {"iterations": len(trace), "acceptance_rate": trace.acceptance_rate, "params": params}


def mcse(series):
    """Monte Carlo standard error of the mean, using :func:`ess`."""
    x = np.asarray(series, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(ess(x)))
