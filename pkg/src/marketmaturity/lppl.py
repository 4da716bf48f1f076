"""Log-periodic power-law fits with a fixed preferred scaling factor.

    log P(t) = A + B tau^m + C tau^m cos(omega log tau - phi),
    omega = 2 pi / log(lambda)

with ``tau = t_c - t`` before the critical time (bubble) and
``tau = t - t_c`` after it (anti-bubble). Time differences are in days.
With lambda (hence omega) and m fixed the model is linear in
A, B, C cos(phi) and C sin(phi), so only m needs a nonlinear search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

SECONDS_PER_DAY = 86_400.0
DEFAULT_M_BOUNDS = (0.1, 0.9)


@dataclass(frozen=True)
class LpplParams:
    A: float
    B: float
    C: float
    m: float
    phi: float
    t_c: float  # epoch seconds
    lam: float = 2.0
    phase_kind: str = "bubble"
    omega: float = field(init=False)

    def __post_init__(self):
        if self.lam <= 1:
            raise ValueError("lambda must exceed 1")
        if self.phase_kind not in ("bubble", "antibubble"):
            raise ValueError(f"unknown phase kind {self.phase_kind!r}")
        object.__setattr__(self, "omega", 2 * math.pi / math.log(self.lam))

    def as_dict(self) -> dict:
        return {
            "A": self.A,
            "B": self.B,
            "C": self.C,
            "m": self.m,
            "phi": self.phi,
            "lambda": self.lam,
            "omega": self.omega,
            "t_c": self.t_c,
            "phase_kind": self.phase_kind,
        }


@dataclass(frozen=True, eq=False)
class LpplFit:
    params: LpplParams
    rss: float
    spearman_rho: float
    window: tuple[float, float]
    n_points: int
    starts: list[tuple[float, float]]  # (converged m, rss) per start

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "rss": self.rss,
            "spearman_rho": self.spearman_rho,
            "window": list(self.window),
            "n_points": self.n_points,
        }


def _tau_days(t, t_c: float, phase_kind: str) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    d = (t_c - t) if phase_kind == "bubble" else (t - t_c)
    d = d / SECONDS_PER_DAY
    if np.any(d == 0):
        raise ValueError("t equals t_c (log singularity)")
    if np.any(d < 0):
        side = "before" if phase_kind == "bubble" else "after"
        raise ValueError(f"{phase_kind} times must lie {side} t_c")
    return d


def lppl_eval(params: LpplParams, t) -> np.ndarray | float:
    tau = _tau_days(t, params.t_c, params.phase_kind)
    p = tau**params.m
    out = params.A + params.B * p + params.C * p * np.cos(params.omega * np.log(tau) - params.phi)
    return float(out) if np.ndim(t) == 0 else out


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("spearman needs two equal-length sequences of at least 3 values")
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise ValueError("spearman correlation undefined for constant input")
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def _design(tau: np.ndarray, m: float, omega: float) -> np.ndarray:
    p = tau**m
    lt = np.log(tau)
    return np.column_stack([np.ones_like(tau), p, p * np.cos(omega * lt), p * np.sin(omega * lt)])


def _solve(tau, y, m, omega):
    X = _design(tau, m, omega)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return coef, float(r @ r)


def _canonical(c1: float, c2: float) -> tuple[float, float]:
    # C cos(w - phi) = c1 cos w + c2 sin w; C >= 0, phi in (-pi, pi]
    C = math.hypot(c1, c2)
    phi = math.atan2(c2, c1)
    if phi <= -math.pi:
        phi += 2 * math.pi
    return C, phi


def lppl_fit(
    t,
    log_prices,
    t_c: float,
    phase_kind: str = "bubble",
    lam: float = 2.0,
    m_bounds: tuple[float, float] = DEFAULT_M_BOUNDS,
    multistart: int = 9,
) -> LpplFit:
    """Least-squares fit of the log-periodic power law at fixed t_c and lambda.

    ``multistart`` Nelder-Mead searches over m start from evenly spaced
    points inside ``m_bounds``; A, B, C and phi come from a linear solve at
    every candidate m. The lowest rss wins, ties going to the earlier start.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(log_prices, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and log_prices differ in length")
    if t.size < 100:
        raise ValueError(f"need at least 100 points, got {t.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite log-prices")
    if np.ptp(y) == 0:
        raise ValueError("constant log-prices: degenerate design")
    lo, hi = m_bounds
    if not 0 < lo < hi < 1:
        raise ValueError("m_bounds must satisfy 0 < lo < hi < 1")
    tau = _tau_days(t, t_c, phase_kind)
    omega = 2 * math.pi / math.log(lam)

    def objective(v):
        m = float(v[0])
        if not lo <= m <= hi:
            return np.inf
        return _solve(tau, y, m, omega)[1]

    width = (hi - lo) / multistart
    starts = lo + width * (np.arange(multistart) + 0.5)
    results = []
    for m0 in starts:
        res = optimize.minimize(
            objective,
            x0=[m0],
            method="Nelder-Mead",
            bounds=[(lo, hi)],
            options={"xatol": 1e-8, "fatol": 1e-14, "initial_simplex": [[m0], [min(hi, m0 + width / 2)]]},
        )
        if np.isfinite(res.fun):
            results.append((float(res.x[0]), float(res.fun)))
        else:
            results.append((float(m0), math.inf))
    finite = [i for i, (_, r) in enumerate(results) if math.isfinite(r)]
    if not finite:
        raise RuntimeError("no multistart candidate converged")
    best = min(finite, key=lambda i: (results[i][1], i))
    m_best = results[best][0]
    coef, rss = _solve(tau, y, m_best, omega)
    C, phi = _canonical(coef[2], coef[3])
    params = LpplParams(float(coef[0]), float(coef[1]), C, m_best, phi, float(t_c), lam, phase_kind)
    fitted = lppl_eval(params, t)
    return LpplFit(
        params=params,
        rss=rss,
        spearman_rho=spearman(fitted, y),
        window=(float(t.min()), float(t.max())),
        n_points=int(t.size),
        starts=results,
    )


def scan_tc(t, log_prices, t_c_grid, phase_kind: str = "bubble", lam: float = 2.0, **kw) -> list[tuple[float, float]]:
    """rss of the best fit at each candidate critical time."""
    out = []
    for tc in t_c_grid:
        try:
            out.append((float(tc), lppl_fit(t, log_prices, tc, phase_kind, lam, **kw).rss))
        except ValueError:
            out.append((float(tc), math.inf))
    return out


def daily_closes(times: np.ndarray, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Last price of each UTC day, stamped at the time of that last bin."""
    times = np.asarray(times, dtype=np.int64)
    day = times // 86_400
    last = np.flatnonzero(np.append(day[1:] != day[:-1], True))
    return times[last].astype(float), np.asarray(prices, dtype=float)[last]
