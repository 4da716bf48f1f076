"""Null-model surrogates and synthetic oracle series.

Every generator draws from ``numpy.random.Generator(PCG64(seed))`` (NumPy's
PCG64 bit generator, stable across NumPy >= 1.17), so a seed reproduces the
same output bit for bit. Replica ``k`` of a batch uses seed ``seed + k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .mfdfa import MfdfaResult, SingularitySpectrum

RNG_NAME = "numpy.random.PCG64"
MAX_SEED = 2**64 - 1


def rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(int(seed)))


def replica_seeds(seed: int, replicas: int) -> list[int]:
    return [(int(seed) + k) % (MAX_SEED + 1) for k in range(replicas)]


def shuffle(values, seed: int) -> np.ndarray:
    """Uniform random permutation (Fisher-Yates via ``Generator.permutation``)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot shuffle an empty sequence")
    return rng(seed).permutation(x)


def phase_randomize(values, seed: int) -> np.ndarray:
    """Same amplitude spectrum, uniformly random Fourier phases.

    The zero-frequency term (and the Nyquist term for even lengths) keeps
    its phase, so the mean is preserved and the output is exactly real.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 4:
        raise ValueError("phase randomization needs at least 4 points")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input")
    spec = np.fft.rfft(x)
    phases = rng(seed).uniform(0.0, 2.0 * math.pi, spec.size)
    phases[0] = 0.0
    if n % 2 == 0:
        phases[-1] = 0.0
    return np.fft.irfft(spec * np.exp(1j * phases), n)


def binomial_cascade(levels: int, a: float, seed: int | None = None) -> np.ndarray:
    """Binomial multiplicative cascade with weights ``a`` and ``1 - a``.

    Each cell splits into two children carrying ``a`` and ``1 - a`` of its
    mass, left-to-right, or in random order per cell when ``seed`` is
    given. Scaled to unit mean. Its generalized Hurst exponent is
    ``1/q - log2(a**q + (1-a)**q) / q``.
    """
    if not 4 <= levels <= 24:
        raise ValueError("levels must lie in [4, 24]")
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    gen = None if seed is None else rng(seed)
    w = np.ones(1)
    for _ in range(levels):
        kids = np.stack([w * a, w * (1.0 - a)], axis=1)
        if gen is not None:
            swap = gen.random(w.size) < 0.5
            kids[swap] = kids[swap, ::-1]
        w = kids.ravel()
    return w * (w.size / math.fsum(w))


def cascade_hurst(q, a: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return 1.0 / q - np.log2(a**q + (1.0 - a) ** q) / q


def white_noise(n: int, seed: int, marginal: str = "gaussian", df: float | None = None) -> np.ndarray:
    """i.i.d. draws; ``marginal`` is ``gaussian`` or ``student-t`` (needs df > 2)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    g = rng(seed)
    if marginal == "gaussian":
        return g.standard_normal(n)
    if marginal in ("student-t", "student_t", "t"):
        if df is None or not df > 2:
            raise ValueError("student-t marginal needs df > 2")
        return g.standard_t(df, n)
    raise ValueError(f"unknown marginal {marginal!r}")


def surrogates(values, method: str, seed: int, replicas: int = 10) -> list[np.ndarray]:
    fn = {"shuffle": shuffle, "phase": phase_randomize}.get(method)
    if fn is None:
        raise ValueError(f"unknown surrogate method {method!r}")
    return [fn(values, s) for s in replica_seeds(seed, replicas)]


@dataclass(frozen=True, eq=False)
class SurrogateSummary:
    method: str
    seeds: list[int]
    original: "MfdfaResult"
    replicas: list["MfdfaResult"]
    pooled_delta_alpha: float  # mean of per-replica widths
    pooled_alpha_0: float
    pooled_H: float
    mean_curve_spectrum: "SingularitySpectrum | None"  # spectrum of the replica-mean h(q)

    @property
    def width_reduction(self) -> float:
        """Fractional drop of Δα from the original to the pooled surrogates."""
        d0 = self.original.spectrum.delta_alpha if self.original.spectrum else float("nan")
        return 1.0 - self.pooled_delta_alpha / d0 if d0 > 0 else float("nan")

    def as_dict(self) -> dict:
        def spec(r):
            sp = r.spectrum
            H = r.curve.at(2.0)[0] if np.any(np.isclose(r.curve.q, 2.0)) else None
            return {
                "H": H,
                "delta_alpha": None if sp is None else sp.delta_alpha,
                "alpha_0": None if sp is None else sp.alpha_0,
                "asymmetry": None if sp is None else sp.asymmetry,
            }

        mc = self.mean_curve_spectrum
        return {
            "method": self.method,
            "rng": RNG_NAME,
            "original": spec(self.original),
            "replicas": [dict(seed=s, **spec(r)) for s, r in zip(self.seeds, self.replicas)],
            "pooled": {
                "delta_alpha": self.pooled_delta_alpha,
                "alpha_0": self.pooled_alpha_0,
                "H": self.pooled_H,
                "width_reduction": self.width_reduction,
                "mean_curve_delta_alpha": None if mc is None else mc.delta_alpha,
                "mean_curve_alpha_0": None if mc is None else mc.alpha_0,
            },
        }


def surrogate_mfdfa(values, method: str, seed: int, replicas: int = 10, **mfdfa_kw) -> SurrogateSummary:
    """MFDFA of a series and of ``replicas`` surrogates on the same grids.

    Pooled figures average the per-replica spectra; the spectrum of the
    replica-mean h(q) is reported alongside.
    """
    from .mfdfa import HurstCurve, mfdfa, singularity_spectrum

    x = np.asarray(values, dtype=float)
    original = mfdfa(x, **mfdfa_kw)
    seeds = replica_seeds(seed, replicas)
    fn = {"shuffle": shuffle, "phase": phase_randomize}.get(method)
    if fn is None:
        raise ValueError(f"unknown surrogate method {method!r}")
    reps = [mfdfa(fn(x, s), **mfdfa_kw) for s in seeds]
    widths = [r.spectrum.delta_alpha for r in reps if r.spectrum is not None]
    centers = [r.spectrum.alpha_0 for r in reps if r.spectrum is not None]
    hs = np.array([r.curve.h for r in reps])
    q = reps[0].curve.q
    i2 = np.flatnonzero(np.isclose(q, 2.0))
    with np.errstate(invalid="ignore"):
        mean_h = hs.mean(axis=0)
    try:
        mc = singularity_spectrum(HurstCurve(q, mean_h, np.zeros_like(mean_h), reps[0].curve.fit_range, 0))
    except ValueError:
        mc = None
    return SurrogateSummary(
        method=method,
        seeds=seeds,
        original=original,
        replicas=reps,
        pooled_delta_alpha=float(np.mean(widths)) if widths else float("nan"),
        pooled_alpha_0=float(np.mean(centers)) if centers else float("nan"),
        pooled_H=float(mean_h[i2[0]]) if i2.size else float("nan"),
        mean_curve_spectrum=mc,
    )
