"""Tail distributions, power-law tail exponents and autocorrelation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

# Tail fractions tried in ks-scan mode: 40 log-spaced points in [1e-3, 0.2].
KS_SCAN_FRACTIONS = np.geomspace(1e-3, 0.2, 40)
KS_MIN_TAIL = 50


@dataclass(frozen=True)
class TailFit:
    gamma: float
    stderr: float
    tail_fraction: float
    threshold: float
    n_tail: int
    ccdf: np.ndarray  # (n_tail, 2): |r|, P(X >= |r|) over the tail points
    ks_distance: float | None = None

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "stderr": self.stderr,
            "tail_fraction": self.tail_fraction,
            "threshold": self.threshold,
            "n_tail": self.n_tail,
        }


@dataclass(frozen=True)
class AcfCurve:
    lags: np.ndarray
    values: np.ndarray
    series_kind: str = "returns"


def ccdf(values) -> np.ndarray:
    """Empirical P(X > x) at each distinct sample value, as an (k, 2) array.

    Strict inequality, so the largest value always maps to 0.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("ccdf of empty input")
    uniq = np.unique(x)
    # number of samples strictly greater than u = n - (index past last occurrence of u)
    greater = x.size - np.searchsorted(x, uniq, side="right")
    return np.column_stack([uniq, greater / x.size])


def _hill(desc: np.ndarray, k: int) -> tuple[float, float]:
    tail = desc[:k]
    threshold = tail[-1]
    spread = np.log(tail / threshold).sum()
    if not spread > 0:
        raise ValueError("all tail values equal; Hill estimate undefined")
    return k / spread, float(threshold)


def _ks_distance(desc: np.ndarray, k: int, gamma: float, threshold: float) -> float:
    # empirical CDF of the k tail points against the fitted Pareto above threshold
    tail = np.sort(desc[:k])
    model = 1.0 - (tail / threshold) ** (-gamma)
    emp_hi = np.arange(1, k + 1) / k
    emp_lo = np.arange(0, k) / k
    return float(max(np.max(np.abs(emp_hi - model)), np.max(np.abs(model - emp_lo))))


def fit_tail_exponent(values, tail_fraction: float = 0.01, mode: str = "fixed-fraction") -> TailFit:
    """Hill estimate of the upper-tail exponent of ``|values|``.

    Uses the k = ceil(tail_fraction * n) largest absolute values with the
    smallest of them as threshold: gamma = k / sum(log(x_i / threshold)),
    stderr = gamma / sqrt(k). In ``ks-scan`` mode the fraction is picked from
    `KS_SCAN_FRACTIONS` (capped at ``tail_fraction``) by minimum
    Kolmogorov-Smirnov distance between tail and fitted power law.
    """
    x = np.abs(np.asarray(values, dtype=float))
    n = x.size
    if n < 500:
        raise ValueError(f"need at least 500 values for a tail fit, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in tail fit input")
    if not 0 < tail_fraction <= 0.2:
        raise ValueError("tail_fraction must lie in (0, 0.2]")
    desc = np.sort(x)[::-1]
    if desc[0] <= 0:
        raise ValueError("all values are zero")

    ks = None
    if mode == "fixed-fraction":
        frac = tail_fraction
    elif mode == "ks-scan":
        best = None
        for f in KS_SCAN_FRACTIONS[KS_SCAN_FRACTIONS <= tail_fraction + 1e-15]:
            k = math.ceil(f * n)
            if k < KS_MIN_TAIL or desc[k - 1] <= 0:
                continue
            try:
                g, thr = _hill(desc, k)
            except ValueError:
                continue
            d = _ks_distance(desc, k, g, thr)
            if best is None or d < best[0]:
                best = (d, float(f))
        if best is None:
            raise ValueError("no candidate tail fraction admits a fit")
        ks, frac = best
    else:
        raise ValueError(f"unknown mode {mode!r}")

    k = math.ceil(frac * n)
    if desc[k - 1] <= 0:
        raise ValueError("tail reaches zero values; lower tail_fraction")
    gamma, threshold = _hill(desc, k)
    if ks is None:
        ks = _ks_distance(desc, k, gamma, threshold)
    tail = desc[:k][::-1]
    # P(X >= x) over the tail, so the largest point sits at multiplicity/n
    geq = (n - np.searchsorted(np.sort(x), tail, side="left")) / n
    return TailFit(
        gamma=float(gamma),
        stderr=float(gamma / math.sqrt(k)),
        tail_fraction=float(frac),
        threshold=threshold,
        n_tail=int(k),
        ccdf=np.column_stack([tail, geq]),
        ks_distance=ks,
    )


def acf(values, max_lag: int, series_kind: str = "returns") -> AcfCurve:
    """Autocorrelation with one global mean and variance.

    c(tau) = sum_t (x_t - m)(x_{t+tau} - m) / sum_t (x_t - m)^2, i.e. the
    divisor-n estimator; |c| <= 1 always. Computed by FFT.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if not 1 <= max_lag < n:
        raise ValueError(f"need 1 <= max_lag < n (max_lag={max_lag}, n={n})")
    d = x - x.mean()
    var = float(np.dot(d, d))
    if not var > 0:
        raise ValueError("acf of a zero-variance series")
    nfft = sfft.next_fast_len(2 * n - 1, real=True)
    spec = sfft.rfft(d, nfft)
    cov = sfft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    out = cov / var
    out[0] = 1.0
    return AcfCurve(np.arange(max_lag + 1), out, series_kind)


def log_lag_grid(max_lag: int, points_per_decade: int = 20) -> np.ndarray:
    """Distinct integer lags from 1 to max_lag, evenly spaced in log(lag)."""
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    n = max(2, int(round(points_per_decade * math.log10(max_lag))) + 1)
    return np.unique(np.round(np.geomspace(1, max_lag, n)).astype(int))
