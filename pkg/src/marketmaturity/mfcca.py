"""Multifractal cross-correlation analysis and the q-dependent detrended
cross-correlation coefficient.

Segment covariances keep their sign: the q-th order covariance averages
``sign(F2) * |F2|**(q/2)`` and F_xy(q, s) takes a sign-carrying 1/q root,
so stretches of negative cross-covariance show up as negative F_xy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mfdfa as _mf


@dataclass(frozen=True, eq=False)
class CrossFluctuationSurface:
    q: np.ndarray
    scales: np.ndarray
    F_xy: np.ndarray
    moments: np.ndarray
    sign_flip_counts: np.ndarray  # (len(q), len(scales)) negative-covariance segments
    zero_variance_counts: np.ndarray
    n_segments: np.ndarray
    length: int
    order: int

    def changes_sign(self, q: float) -> bool:
        row = self.F_xy[_mf._q_index(self.q, q)]
        row = row[np.isfinite(row)]
        return bool(np.any(row > 0) and np.any(row < 0))


@dataclass(frozen=True, eq=False)
class LambdaCurve:
    q: np.ndarray
    lam: np.ndarray  # NaN where scaling_ok is False
    stderr: np.ndarray
    h_xy: np.ndarray
    scaling_ok: np.ndarray
    fit_range: tuple[int, int]

    def gap(self, q: float) -> float:
        i = _mf._q_index(self.q, q)
        return float(self.lam[i] - self.h_xy[i])


@dataclass(frozen=True, eq=False)
class RhoProfile:
    q: np.ndarray
    scales: np.ndarray
    rho: np.ndarray  # (len(q), len(scales))

    def at(self, q: float, s: int) -> float:
        j = int(np.argmin(np.abs(self.scales - s)))
        return float(self.rho[_mf._q_index(self.q, q), j])


def default_cross_q() -> np.ndarray:
    return _mf.q_grid(0.4, 4.0, 0.2)


def _prep(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series lengths differ ({x.size} vs {y.size})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in input")
    return x, y


def cross_fluctuation(x, y, q=None, scales=None, order: int = 2) -> CrossFluctuationSurface:
    x, y = _prep(x, y)
    q = default_cross_q() if q is None else np.asarray(q, dtype=float)
    scales = _mf.scale_grid(x.size, order=order) if scales is None else scales
    nx = _mf.profile_nodes(x)
    # identical inputs take the single-series path so the two agree exactly
    ny = None if np.array_equal(x, y) else _mf.profile_nodes(y)
    q, scales, F, mom, zeros, negs, nseg = _mf._surface_arrays(nx, ny, x.size, q, scales, order)
    flips = np.broadcast_to(negs, F.shape).copy()
    return CrossFluctuationSurface(q, scales, F, mom, flips, zeros, nseg, x.size, order)


def fit_lambda(
    surface: CrossFluctuationSurface,
    fit_range: tuple[int, int] | None = None,
    h_x: _mf.HurstCurve | None = None,
    h_y: _mf.HurstCurve | None = None,
    q_fit: tuple[float, float] = (1.0, 4.0),
) -> LambdaCurve:
    """lambda_q as the log-log slope of F_xy(q, s), for q within ``q_fit``.

    A q gets no exponent unless F_xy(q, s) > 0 at every scale of the fit
    range. ``h_xy`` is the mean of the two single-series h(q) when given.
    """
    fit_range = _mf.default_fit_range(surface.length) if fit_range is None else tuple(int(v) for v in fit_range)
    mask = _mf._fit_mask(surface.scales, fit_range)
    s = surface.scales[mask]
    nq = len(surface.q)
    lam = np.full(nq, np.nan)
    se = np.full(nq, np.nan)
    ok = np.zeros(nq, dtype=bool)
    in_q = (surface.q >= q_fit[0] - 1e-9) & (surface.q <= q_fit[1] + 1e-9)
    for i in np.flatnonzero(in_q):
        row = surface.F_xy[i, mask]
        if np.all(np.isfinite(row)) and np.all(row > 0):
            lam[i], se[i] = _mf.loglog_slope(s, row)
            ok[i] = True
    if not ok.any():
        raise ValueError("no q in the fit band shows positive F_xy over the whole fit range")
    h_xy = np.full(nq, np.nan)
    if h_x is not None and h_y is not None:
        for i, qq in enumerate(surface.q):
            try:
                h_xy[i] = 0.5 * (h_x.at(qq)[0] + h_y.at(qq)[0])
            except KeyError:
                pass
    return LambdaCurve(surface.q.copy(), lam, se, h_xy, ok, fit_range)


def rho_q(x, y, q=(1.0, 2.0, 3.0, 4.0), scales=None, order: int = 2) -> RhoProfile:
    """rho_q(s) = F^q_xy(s) / sqrt(F^q_xx(s) F^q_yy(s)) for q > 0."""
    x, y = _prep(x, y)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(q <= 0):
        raise ValueError("rho_q is defined for q > 0 only")
    scales = _mf.scale_grid(x.size, order=order) if scales is None else np.asarray(scales, dtype=np.int64)
    nx = _mf.profile_nodes(x)
    ny = _mf.profile_nodes(y)
    n = x.size
    rho = np.empty((q.size, len(scales)))
    for j, s in enumerate(scales):
        rx = _mf.detrend_segments(nx, int(s), order, n)
        ry = _mf.detrend_segments(ny, int(s), order, n)
        fxx = np.mean(rx * rx, axis=1)
        fyy = np.mean(ry * ry, axis=1)
        fxy = np.mean(rx * ry, axis=1)
        for i, qq in enumerate(q):
            num = np.mean(np.sign(fxy) * np.abs(fxy) ** (qq / 2))
            den = math.sqrt(np.mean(fxx ** (qq / 2)) * np.mean(fyy ** (qq / 2)))
            if den == 0:
                raise ValueError(f"zero denominator at s={s} (constant series?)")
            rho[i, j] = num / den
    return RhoProfile(q, np.asarray(scales), rho)


def mfcca(x, y, q=None, scales=None, order: int = 2, fit_range=None, q_fit=(1.0, 4.0)):
    """Cross surface, lambda_q and h_xy for a pair, using one scale grid throughout."""
    x, y = _prep(x, y)
    scales = _mf.scale_grid(x.size, order=order) if scales is None else scales
    surf = cross_fluctuation(x, y, q, scales, order)
    hx = _mf.fit_generalized_hurst(_mf.fluctuation_function(x, surf.q, scales, order), fit_range)
    hy = _mf.fit_generalized_hurst(_mf.fluctuation_function(y, surf.q, scales, order), fit_range)
    return surf, fit_lambda(surf, fit_range, hx, hy, q_fit)
