"""Multifractal detrended fluctuation analysis.

The profile is split into ``M_s = floor(T/s)`` segments of length ``s``
counted from the start and another ``M_s`` counted from the end. Each
segment loses a least-squares polynomial of order ``m`` and the mean
squared residual gives F^2(nu, s). The q-th order fluctuation function is

    F(q, s) = [ mean_nu (F^2(nu, s))^(q/2) ]^(1/q)

and h(q) is the slope of log F(q, s) against log s. The same segment
machinery computes signed co-residual covariances for two series, which
`marketmaturity.mfcca` builds on; with x = y the two paths are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .returns import ReturnSeries, normalize, from_values

# A segment whose detrended (co)variance is below this fraction of its mean
# squared profile value is treated as exactly polynomial (zero variance).
ZERO_VARIANCE_RTOL = (1024 * np.finfo(float).eps) ** 2
MIN_FIT_SCALES = 5


@dataclass(frozen=True, eq=False)
class FluctuationSurface:
    q: np.ndarray
    scales: np.ndarray
    F: np.ndarray  # (len(q), len(scales)); NaN where a q<0 moment is singular
    moments: np.ndarray  # mean_nu sign(F2)|F2|^(q/2), before the 1/q root
    zero_variance_counts: np.ndarray
    n_segments: np.ndarray
    length: int
    order: int

    def row(self, q: float) -> np.ndarray:
        return self.F[_q_index(self.q, q)]

    @property
    def zero_variance_total(self) -> int:
        return int(self.zero_variance_counts.sum())


@dataclass(frozen=True, eq=False)
class HurstCurve:
    q: np.ndarray
    h: np.ndarray  # NaN where the q row had non-finite F inside the fit range
    stderr: np.ndarray
    fit_range: tuple[int, int]
    n_fit_scales: int

    def at(self, q: float) -> tuple[float, float]:
        i = _q_index(self.q, q)
        return float(self.h[i]), float(self.stderr[i])


@dataclass(frozen=True, eq=False)
class SingularitySpectrum:
    q: np.ndarray
    alpha: np.ndarray
    f_alpha: np.ndarray
    alpha_0: float
    delta_alpha: float
    asymmetry: float
    folded: bool = False


def _q_index(grid: np.ndarray, q: float) -> int:
    hits = np.flatnonzero(np.isclose(grid, q, rtol=0, atol=1e-9))
    if hits.size == 0:
        raise KeyError(f"q={q} not on the grid")
    return int(hits[0])


def q_grid(q_min: float = -4.0, q_max: float = 4.0, step: float = 0.2, include_zero: bool = False) -> np.ndarray:
    """Evenly spaced q values; 0 is dropped unless ``include_zero``."""
    if step <= 0 or q_max < q_min:
        raise ValueError("bad q grid bounds")
    n = int(math.floor((q_max - q_min) / step + 1e-9)) + 1
    q = np.round(q_min + step * np.arange(n), 10)
    if not include_zero:
        q = q[q != 0]
    if np.any(np.abs(q) > 8):
        raise ValueError("|q| > 8 is not supported")
    return q


def scale_grid(
    length: int,
    s_min: int | None = None,
    s_max: int | None = None,
    n_scales: int = 40,
    order: int = 2,
    spacing: str = "log",
) -> np.ndarray:
    """Integer scales with ``order + 2 <= s`` and ``floor(T/s) >= 4``.

    ``spacing="log"`` gives up to ``n_scales`` log-spaced values;
    ``"dyadic"`` gives every power of two in range, which keeps segments
    aligned with dyadic structure such as binomial cascades.
    """
    lo = max(order + 2, 10) if s_min is None else int(s_min)
    hi = length // 4 if s_max is None else min(int(s_max), length // 4)
    if lo < order + 2:
        raise ValueError(f"s_min={lo} too small for polynomial order {order}")
    if hi < lo:
        raise ValueError(f"series of length {length} too short for s_min={lo}")
    if spacing == "log":
        return np.unique(np.round(np.geomspace(lo, hi, n_scales)).astype(np.int64))
    if spacing == "dyadic":
        p = 2 ** np.arange(int(math.ceil(math.log2(lo))), int(math.floor(math.log2(hi))) + 1, dtype=np.int64)
        if p.size == 0:
            raise ValueError(f"no power of two in [{lo}, {hi}]")
        return p
    raise ValueError(f"unknown spacing {spacing!r}")


def default_fit_range(length: int) -> tuple[int, int]:
    return 100, int(min(10_000, length // 10))


def profile(values) -> np.ndarray:
    """Cumulative sum of mean-removed values, X(1..T)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("profile of empty input")
    return np.cumsum(x - x.mean())


def profile_nodes(values) -> np.ndarray:
    """Profile with the origin X(0) = 0 prepended (T + 1 nodes).

    Segmenting the node sequence makes forward and backward segmentation
    mirror images, so a reversed series gives the same F(q, s).
    """
    return np.concatenate(([0.0], profile(values)))


@lru_cache(maxsize=256)
def _basis(s: int, order: int) -> np.ndarray:
    # orthonormal basis of polynomials <= order on s points rescaled to [-1, 1]
    t = np.linspace(-1.0, 1.0, s)
    v = np.polynomial.legendre.legvander(t, order)
    qmat, _ = np.linalg.qr(v)
    qmat.setflags(write=False)
    return qmat


def _segments(nodes: np.ndarray, s: int, n_points: int) -> np.ndarray:
    m = n_points // s
    fwd = nodes[: m * s].reshape(m, s)
    bwd = nodes[len(nodes) - m * s :].reshape(m, s)[::-1]
    return np.concatenate([fwd, bwd])


def detrend_segments(nodes: np.ndarray, s: int, order: int, n_points: int | None = None) -> np.ndarray:
    """Residuals after removing an order-``order`` fit from every segment.

    Returns a ``(2 M_s, s)`` array: rows ``0..M_s-1`` run forward from the
    start, the rest backward from the end.
    """
    if n_points is None:
        n_points = len(nodes) - 1
    if order >= s - 1:
        raise ValueError(f"polynomial order {order} underdetermined for s={s}")
    if n_points // s < 1:
        raise ValueError(f"scale {s} exceeds series length {n_points}")
    seg = _segments(nodes, s, n_points)
    # constants lie in the fit space; removing the segment offset first keeps
    # rounding proportional to the local excursion, not the profile level
    seg = seg - seg.mean(axis=1, keepdims=True)
    qmat = _basis(s, order)
    res = seg - (seg @ qmat) @ qmat.T
    # second projection pass removes the rounding left by the first
    res -= (res @ qmat) @ qmat.T
    return res


def segment_covariances(nodes_x: np.ndarray, nodes_y: np.ndarray | None, s: int, order: int, n_points: int | None = None) -> np.ndarray:
    """F^2_xy(nu, s) for every segment; ``nodes_y=None`` means y = x."""
    rx = detrend_segments(nodes_x, s, order, n_points)
    ry = rx if nodes_y is None else detrend_segments(nodes_y, s, order, n_points)
    f2 = np.mean(rx * ry, axis=1)
    n = len(nodes_x) - 1 if n_points is None else n_points
    mx = np.mean(_segments(nodes_x, s, n) ** 2, axis=1)
    my = mx if nodes_y is None else np.mean(_segments(nodes_y, s, n) ** 2, axis=1)
    tiny = ZERO_VARIANCE_RTOL * np.sqrt(mx * my)
    f2[np.abs(f2) <= tiny] = 0.0
    return f2


def _moment_rows(f2: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(q-th moments, F) for one scale given its segment covariances."""
    sign = np.sign(f2)
    mag = np.abs(f2)
    zero = mag == 0
    moments = np.empty(len(q))
    F = np.empty(len(q))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for i, qq in enumerate(q):
            if qq == 0:
                # log-average variant; defined only without zero segments
                moments[i] = np.nan
                F[i] = np.exp(0.5 * np.mean(np.log(mag))) if not zero.any() and np.all(sign > 0) else np.nan
                continue
            if qq < 0 and zero.any():
                moments[i] = np.inf
                F[i] = np.nan
                continue
            mom = np.mean(sign * mag ** (qq / 2.0))
            moments[i] = mom
            F[i] = math.copysign(abs(mom) ** (1.0 / qq), mom) if mom != 0 else 0.0
    return moments, F


def _surface_arrays(nodes_x, nodes_y, n_points, q, scales, order):
    q = np.asarray(q, dtype=float)
    scales = np.asarray(scales, dtype=np.int64)
    if np.any(q == 0) and nodes_y is not None:
        raise ValueError("q = 0 is not defined for cross fluctuations")
    if scales.size == 0 or np.any(np.diff(scales) <= 0):
        raise ValueError("scale grid must be non-empty and strictly increasing")
    if order < 1:
        raise ValueError("detrending order must be >= 1")
    if scales[0] <= order + 1:
        raise ValueError(f"s_min={scales[0]} too small for order {order} (need >= {order + 2})")
    if n_points < 4 * scales[0]:
        raise ValueError(f"series of length {n_points} too short for s_min={scales[0]}")
    if n_points // scales[-1] < 4:
        raise ValueError(f"s_max={scales[-1]} leaves fewer than 4 segments per direction")
    F = np.empty((len(q), len(scales)))
    mom = np.empty_like(F)
    zeros = np.zeros(len(scales), dtype=np.int64)
    negs = np.zeros(len(scales), dtype=np.int64)
    nseg = np.zeros(len(scales), dtype=np.int64)
    for j, s in enumerate(scales):
        f2 = segment_covariances(nodes_x, nodes_y, int(s), order, n_points)
        mom[:, j], F[:, j] = _moment_rows(f2, q)
        zeros[j] = int(np.count_nonzero(f2 == 0))
        negs[j] = int(np.count_nonzero(f2 < 0))
        nseg[j] = f2.size
    return q, scales, F, mom, zeros, negs, nseg


def fluctuation_function(values, q=None, scales=None, order: int = 2) -> FluctuationSurface:
    x = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input")
    q = q_grid() if q is None else q
    scales = scale_grid(x.size, order=order) if scales is None else scales
    q, scales, F, mom, zeros, _, nseg = _surface_arrays(profile_nodes(x), None, x.size, q, scales, order)
    return FluctuationSurface(q, scales, F, mom, zeros, nseg, x.size, order)


def loglog_slope(scales: np.ndarray, F: np.ndarray) -> tuple[float, float]:
    """OLS slope of log F on log s and its standard error."""
    lx = np.log(scales.astype(float))
    ly = np.log(F)
    n = lx.size
    xm = lx.mean()
    sxx = np.sum((lx - xm) ** 2)
    slope = float(np.sum((lx - xm) * (ly - ly.mean())) / sxx)
    resid = ly - ly.mean() - slope * (lx - xm)
    se = float(np.sqrt(np.sum(resid**2) / (n - 2) / sxx)) if n > 2 else float("nan")
    return slope, se


def _fit_mask(scales: np.ndarray, fit_range: tuple[int, int]) -> np.ndarray:
    lo, hi = fit_range
    mask = (scales >= lo) & (scales <= hi)
    if mask.sum() < MIN_FIT_SCALES:
        raise ValueError(
            f"fit range [{lo}, {hi}] holds {int(mask.sum())} grid scales; need >= {MIN_FIT_SCALES}"
        )
    return mask


def fit_generalized_hurst(surface: FluctuationSurface, fit_range: tuple[int, int] | None = None) -> HurstCurve:
    """Per-q log-log slopes over ``fit_range`` (inclusive, in bins).

    q rows with any non-finite or non-positive F inside the range get NaN.
    """
    fit_range = default_fit_range(surface.length) if fit_range is None else tuple(int(v) for v in fit_range)
    mask = _fit_mask(surface.scales, fit_range)
    s = surface.scales[mask]
    h = np.full(len(surface.q), np.nan)
    se = np.full(len(surface.q), np.nan)
    for i in range(len(surface.q)):
        row = surface.F[i, mask]
        if np.all(np.isfinite(row)) and np.all(row > 0):
            h[i], se[i] = loglog_slope(s, row)
    return HurstCurve(surface.q.copy(), h, se, fit_range, int(mask.sum()))


def _longest_finite_run(h: np.ndarray) -> slice:
    best = (0, 0)
    start = None
    for i, ok in enumerate(np.append(np.isfinite(h), False)):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return slice(*best)


def singularity_spectrum(curve: HurstCurve, fold_tol: float = 1e-3) -> SingularitySpectrum:
    """alpha = h + q h'(q), f = q (alpha - h) + 1, with h' by finite differences.

    Uses the longest run of consecutive finite h(q). ``folded`` is set when
    alpha(q) increases anywhere by more than ``fold_tol``.
    """
    run = _longest_finite_run(curve.h)
    q = curve.q[run]
    h = curve.h[run]
    if q.size < 5:
        raise ValueError("need h(q) on at least 5 consecutive q values")
    dh = np.gradient(h, q, edge_order=1)
    alpha = h + q * dh
    f = q * (alpha - h) + 1.0
    a_min, a_max = float(alpha.min()), float(alpha.max())
    alpha_0 = float(alpha[int(np.argmax(f))])
    left, right = alpha_0 - a_min, a_max - alpha_0
    asym = (left - right) / (left + right) if left + right > 1e-12 else 0.0
    folded = bool(np.any(np.diff(alpha) > fold_tol))
    return SingularitySpectrum(q, alpha, f, alpha_0, a_max - a_min, float(asym), folded)


@dataclass(frozen=True)
class RollingPoint:
    start_index: int
    start_time: int | None
    n_bins: int
    H: float
    stderr: float
    zero_fraction: float
    flagged: bool


def fixed_windows(length: int, window_bins: int, step_bins: int) -> list[tuple[int, int]]:
    if step_bins < 1 or step_bins > window_bins:
        raise ValueError("need 1 <= step <= window")
    if window_bins > length:
        raise ValueError(f"window of {window_bins} bins longer than series ({length})")
    return [(i, window_bins) for i in range(0, length - window_bins + 1, step_bins)]


def calendar_month_windows(start: int, bin_seconds: int, length: int) -> list[tuple[int, int]]:
    """(start_index, n_bins) for each UTC calendar month covered by the grid."""
    from datetime import datetime, timezone

    t0 = datetime.fromtimestamp(start, tz=timezone.utc)
    y, mth = t0.year, t0.month
    out = []
    end_time = start + bin_seconds * length
    while True:
        ms = int(datetime(y, mth, 1, tzinfo=timezone.utc).timestamp())
        y2, m2 = (y + 1, 1) if mth == 12 else (y, mth + 1)
        me = int(datetime(y2, m2, 1, tzinfo=timezone.utc).timestamp())
        if ms >= end_time:
            break
        lo = max(0, -(-(ms - start) // bin_seconds))
        hi = min(length, -(-(me - start) // bin_seconds))
        if hi > lo:
            out.append((lo, hi - lo))
        y, mth = y2, m2
    return out


def rolling_hurst(
    returns: ReturnSeries | Sequence[float],
    window_bins: int = 43_200,
    step_bins: int | None = None,
    fit_range: tuple[int, int] | None = None,
    order: int = 2,
    zero_cap: float = 0.5,
    windows: Sequence[tuple[int, int]] | None = None,
    min_window: int = 40_000,
) -> list[RollingPoint]:
    """H = h(2) per window, with per-window normalization.

    ``windows`` overrides the fixed ``window_bins``/``step_bins`` tiling (for
    calendar months). Windows shorter than ``min_window`` are skipped;
    windows whose share of exactly-zero returns exceeds ``zero_cap`` are
    kept but flagged.
    """
    rs = returns if isinstance(returns, ReturnSeries) else from_values(returns)
    x = np.asarray(rs.values, dtype=float)
    if windows is None:
        if window_bins < min_window:
            raise ValueError(f"window_bins={window_bins} below the minimum of {min_window}")
        windows = fixed_windows(x.size, window_bins, window_bins if step_bins is None else step_bins)
    out = []
    for lo, n in windows:
        if n < min_window:
            continue
        if lo + n > x.size:
            raise ValueError("window extends past the series")
        w = x[lo : lo + n]
        zero_frac = float(np.mean(w == 0))
        t = None if rs.start is None else int(rs.start + lo * (rs.bin_seconds or 60))
        try:
            wn = normalize(from_values(w)).values
        except ValueError:
            out.append(RollingPoint(lo, t, n, float("nan"), float("nan"), zero_frac, True))
            continue
        fr = default_fit_range(n) if fit_range is None else fit_range
        surf = fluctuation_function(wn, np.array([2.0]), scale_grid(n, order=order), order)
        curve = fit_generalized_hurst(surf, fr)
        H, se = curve.at(2.0)
        flagged = zero_frac > zero_cap or not math.isfinite(H)
        out.append(RollingPoint(lo, t, n, H, se, zero_frac, flagged))
    return out


@dataclass(frozen=True, eq=False)
class MfdfaResult:
    surface: FluctuationSurface
    curve: HurstCurve
    spectrum: SingularitySpectrum | None

    def summary(self) -> dict:
        try:
            H, H_se = self.curve.at(2.0)
        except KeyError:
            H, H_se = float("nan"), float("nan")
        sp = self.spectrum
        return {
            "H": H,
            "H_stderr": H_se,
            "delta_alpha": None if sp is None else sp.delta_alpha,
            "asymmetry": None if sp is None else sp.asymmetry,
            "alpha_0": None if sp is None else sp.alpha_0,
            "spectrum_folded": None if sp is None else sp.folded,
            "fit_range": list(self.curve.fit_range),
            "zero_variance_total": self.surface.zero_variance_total,
        }


def mfdfa(values, q=None, scales=None, order: int = 2, fit_range: tuple[int, int] | None = None) -> MfdfaResult:
    """Surface, h(q) and spectrum in one call."""
    surf = fluctuation_function(values, q, scales, order)
    curve = fit_generalized_hurst(surf, fit_range)
    try:
        spec = singularity_spectrum(curve)
    except ValueError:
        spec = None
    return MfdfaResult(surf, curve, spec)
