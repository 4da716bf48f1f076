"""Config-driven batch runs: ingest once, analyse each period, write a bundle.

A bundle is a directory with one subdirectory per period. Each holds the
CSV/JSON outputs of the selected analyses plus ``manifest.json`` listing
every file with its SHA-256, the config and data hashes, timings, ingest
diagnostics and a ``status`` of ``complete`` or ``incomplete``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from . import lppl as _lppl
from . import mfcca as _mfcca
from . import mfdfa as _mfdfa
from . import stats as _stats
from . import surrogate as _sur
from ._io import json_text, read_values, sha256_file, write_csv, write_json
from .ingest import PriceSeries, load_series, parse_time
from .returns import from_values, log_returns, normalize, volatility

log = logging.getLogger(__name__)

ANALYSES = ("tails", "acf", "mfdfa", "hurst_roll", "mfcca", "rho", "surrogate", "lppl")

DEFAULTS: dict[str, Any] = {
    "input": None,
    "schema": None,
    "bin_seconds": 60,
    "delta_t": 1,
    "seed": 0,
    "out": "results",
    "periods": None,  # {name: {from, to}}; None means one period "all"
    "analyses": {},
}

ANALYSIS_DEFAULTS: dict[str, dict[str, Any]] = {
    "tails": {"series": "returns", "tail_fraction": 0.01, "mode": "ks-scan"},
    "acf": {"series": ["returns", "volatility"], "max_lag": 100_000, "points_per_decade": 20},
    "mfdfa": {
        "series": "returns",
        "q_min": -4.0,
        "q_max": 4.0,
        "q_step": 0.2,
        "s_min": None,
        "s_max": None,
        "n_scales": 40,
        "spacing": "log",
        "order": 2,
        "fit_lo": None,
        "fit_hi": None,
    },
    "hurst_roll": {
        "series": "returns",
        "windows": "calendar",
        "window_bins": 43_200,
        "step_bins": None,
        "zero_cap": 0.5,
        "min_window": 40_000,
        "order": 2,
        "fit_lo": None,
        "fit_hi": None,
    },
    "mfcca": {
        "x": "volatility",
        "y": "volume_base",
        "q_min": 0.4,
        "q_max": 4.0,
        "q_step": 0.2,
        "q_fit_lo": 1.0,
        "q_fit_hi": 4.0,
        "s_min": None,
        "s_max": None,
        "n_scales": 40,
        "order": 2,
        "fit_lo": None,
        "fit_hi": None,
    },
    "rho": {"x": "volatility", "y": "volume_base", "q": [1.0, 2.0, 3.0, 4.0], "s_min": 100, "s_max": 1000, "n_scales": 20, "order": 2},
    "surrogate": {"series": "returns", "method": ["shuffle", "phase"], "replicas": 10},
    "lppl": {
        "t_c": None,
        "phase": "bubble",
        "lambda": 2.0,
        "from": None,
        "to": None,
        "m_lo": 0.1,
        "m_hi": 0.9,
        "multistart": 9,
        "daily": True,
    },
}

VOLUME_CONVENTION = "raw per-bin totals aligned to the closing bin of each return"


class PipelineError(RuntimeError):
    def __init__(self, module: str, params: dict, message: str):
        super().__init__(f"[{module}] {message} (params: {params})")
        self.module = module
        self.params = params
        self.message = message


@dataclass
class Context:
    """Per-period data shared by the analyses."""

    name: str
    series: PriceSeries | None
    derived: dict[str, np.ndarray] = field(default_factory=dict)
    delta_t: int = 1
    seed: int = 0

    def get(self, kind: str) -> np.ndarray:
        if kind not in self.derived:
            self.derived[kind] = self._derive(kind)
        return self.derived[kind]

    def _derive(self, kind: str) -> np.ndarray:
        if self.series is None:
            raise ValueError(f"series {kind!r} needs a price input")
        if kind in ("returns", "volatility", "raw_returns"):
            r = log_returns(self.series, self.delta_t)
            if kind == "raw_returns":
                return np.asarray(r.values)
            rn = normalize(r)
            return np.asarray(rn.values if kind == "returns" else volatility(rn).values)
        if kind in ("volume_base", "volume_quote"):
            v = np.asarray(getattr(self.series, "volumes_base" if kind == "volume_base" else "volumes_quote"), dtype=float)
            c = np.concatenate(([0.0], np.cumsum(v)))
            d = self.delta_t
            # total volume over bins i+1..i+d, matching return i
            return c[1 + d :] - c[1 : len(c) - d]
        raise ValueError(f"unknown series kind {kind!r}")


# ---------------------------------------------------------------- config


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg


def resolve_config(cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Fill defaults; ``overrides`` (from CLI flags) win over file values."""
    out = copy.deepcopy(DEFAULTS)
    for src in (cfg or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        for k, v in src.items():
            if k == "analyses":
                continue
            out[k] = v
    selected = {}
    given: dict = {}
    for src in ((cfg or {}).get("analyses"), (overrides or {}).get("analyses")):
        if isinstance(src, (list, tuple)):
            src = {name: {} for name in src}
        given.update(src or {})
    for name, params in given.items():
        key = name.replace("-", "_")
        if key not in ANALYSIS_DEFAULTS:
            raise ValueError(f"unknown analysis {name!r} (choose from {', '.join(ANALYSES)})")
        merged = copy.deepcopy(ANALYSIS_DEFAULTS[key])
        merged.update(params or {})
        selected[key] = merged
    out["analyses"] = {k: selected[k] for k in ANALYSES if k in selected}
    periods = out.get("periods")
    if not periods:
        out["periods"] = {"all": {"from": None, "to": None}}
    out["periods"] = dict(out["periods"])
    for name, p in out["periods"].items():
        if not re.fullmatch(r"[A-Za-z0-9._-]+", str(name)):
            raise ValueError(f"period name {name!r} must be a simple file name")
        p = p or {}
        out["periods"][name] = {"from": p.get("from"), "to": p.get("to")}
    return _plain(out)


def _iso(v):
    # YAML turns bare dates into date objects
    if hasattr(v, "isoformat"):
        return v.isoformat()
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return _iso(obj)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json_text(cfg).encode()).hexdigest()


# ------------------------------------------------------------ analyses


def _fit_range(p: dict, length: int):
    lo, hi = _mfdfa.default_fit_range(length)
    return (int(p["fit_lo"]) if p.get("fit_lo") else lo, int(p["fit_hi"]) if p.get("fit_hi") else hi)


def _scales(p: dict, length: int):
    return _mfdfa.scale_grid(length, p.get("s_min"), p.get("s_max"), int(p.get("n_scales", 40)), int(p["order"]), p.get("spacing", "log"))


def do_tails(ctx: Context, p: dict, out: Path) -> dict:
    x = np.abs(ctx.get(p["series"]))
    c = _stats.ccdf(x)
    write_csv(out / "ccdf.csv", ["abs_r", "p_greater"], c)
    fit = _stats.fit_tail_exponent(x, float(p["tail_fraction"]), p["mode"])
    write_json(out / "tailfit.json", fit.as_dict())
    return fit.as_dict()


def do_acf(ctx: Context, p: dict, out: Path) -> dict:
    kinds = p["series"] if isinstance(p["series"], list) else [p["series"]]
    res = {}
    for kind in kinds:
        x = ctx.get(kind)
        max_lag = min(int(p["max_lag"]), x.size - 1)
        curve = _stats.acf(x, max_lag, kind)
        lags = _stats.log_lag_grid(max_lag, int(p["points_per_decade"]))
        write_csv(out / f"acf_{kind}.csv", ["lag", "c"], zip(lags, curve.values[lags]))
        res[kind] = {"max_lag": max_lag, "c1": float(curve.values[1])}
    return res


def run_mfdfa(x: np.ndarray, p: dict) -> _mfdfa.MfdfaResult:
    q = _mfdfa.q_grid(float(p["q_min"]), float(p["q_max"]), float(p["q_step"]))
    return _mfdfa.mfdfa(x, q, _scales(p, x.size), int(p["order"]), _fit_range(p, x.size))


def write_mfdfa(res: _mfdfa.MfdfaResult, out: Path, prefix: str = "") -> dict:
    s = res.surface
    write_csv(out / f"{prefix}fq.csv", ["q", "s", "F"], ((q, sc, s.F[i, j]) for i, q in enumerate(s.q) for j, sc in enumerate(s.scales)))
    c = res.curve
    write_csv(out / f"{prefix}hq.csv", ["q", "h", "stderr"], zip(c.q, c.h, c.stderr))
    if res.spectrum is not None:
        sp = res.spectrum
        write_csv(out / f"{prefix}spectrum.csv", ["q", "alpha", "f_alpha"], zip(sp.q, sp.alpha, sp.f_alpha))
    summary = res.summary()
    write_json(out / f"{prefix}mfdfa.json", summary)
    return summary


def do_mfdfa(ctx: Context, p: dict, out: Path) -> dict:
    return write_mfdfa(run_mfdfa(ctx.get(p["series"]), p), out)


def do_hurst_roll(ctx: Context, p: dict, out: Path) -> dict:
    x = ctx.get(p["series"])
    windows = None
    if p["windows"] == "calendar":
        if ctx.series is None:
            raise ValueError("calendar windows need a timestamped price input")
        windows = _mfdfa.calendar_month_windows(ctx.series.start, ctx.series.bin_seconds, x.size)
    elif p["windows"] != "fixed":
        raise ValueError(f"windows must be 'calendar' or 'fixed', not {p['windows']!r}")
    fr = None
    if p.get("fit_lo") or p.get("fit_hi"):
        fr = _fit_range(p, int(p["window_bins"]))
    rs = from_values(x, ctx.delta_t)
    if ctx.series is not None:
        rs = replace(rs, start=ctx.series.start, bin_seconds=ctx.series.bin_seconds)
    pts = _mfdfa.rolling_hurst(
        rs,
        int(p["window_bins"]),
        None if p.get("step_bins") is None else int(p["step_bins"]),
        fr,
        int(p["order"]),
        float(p["zero_cap"]),
        windows,
        int(p["min_window"]),
    )
    write_csv(
        out / "hurst_roll.csv",
        ["window_start", "start_time", "n_bins", "H", "stderr", "zero_fraction", "flagged"],
        ((w.start_index, "" if w.start_time is None else w.start_time, w.n_bins, w.H, w.stderr, w.zero_fraction, w.flagged) for w in pts),
    )
    return {"windows": len(pts), "flagged": sum(w.flagged for w in pts)}


def _pair(ctx: Context, p: dict):
    return ctx.get(p["x"]), ctx.get(p["y"])


def do_mfcca(ctx: Context, p: dict, out: Path) -> dict:
    x, y = _pair(ctx, p)
    q = _mfdfa.q_grid(float(p["q_min"]), float(p["q_max"]), float(p["q_step"]))
    scales = _scales(p, x.size)
    fr = _fit_range(p, x.size)
    surf, lam = _mfcca.mfcca(x, y, q, scales, int(p["order"]), fr, (float(p["q_fit_lo"]), float(p["q_fit_hi"])))
    write_csv(out / "fxy.csv", ["q", "s", "F_xy", "negative_segments"],
              ((qq, sc, surf.F_xy[i, j], surf.sign_flip_counts[i, j]) for i, qq in enumerate(surf.q) for j, sc in enumerate(surf.scales)))
    write_csv(out / "lambda.csv", ["q", "lambda", "stderr", "h_xy", "scaling_ok"], zip(lam.q, lam.lam, lam.stderr, lam.h_xy, lam.scaling_ok))
    try:
        gap4 = lam.gap(4.0)
    except KeyError:
        gap4 = float("nan")
    summary = {
        "x": p["x"],
        "y": p["y"],
        "fit_range": list(fr),
        "lambda_gap_q4": gap4 if math.isfinite(gap4) else None,
        "scaling_q": [float(v) for v in lam.q[lam.scaling_ok]],
        "volume_convention": VOLUME_CONVENTION,
    }
    write_json(out / "mfcca.json", summary)
    return summary


def do_rho(ctx: Context, p: dict, out: Path) -> dict:
    x, y = _pair(ctx, p)
    scales = _scales(p, x.size)
    prof = _mfcca.rho_q(x, y, p["q"], scales, int(p["order"]))
    write_csv(out / "rho.csv", ["q", "s", "rho"], ((qq, sc, prof.rho[i, j]) for i, qq in enumerate(prof.q) for j, sc in enumerate(prof.scales)))
    res = {}
    if np.any(np.isclose(prof.q, 4.0)):
        res["rho4_s1000"] = prof.at(4.0, 1000)
    return res


def do_surrogate(ctx: Context, p: dict, out: Path, mf: dict) -> dict:
    x = ctx.get(p["series"])
    methods = p["method"] if isinstance(p["method"], list) else [p["method"]]
    q = _mfdfa.q_grid(float(mf["q_min"]), float(mf["q_max"]), float(mf["q_step"]))
    kw = dict(q=q, scales=_scales(mf, x.size), order=int(mf["order"]), fit_range=_fit_range(mf, x.size))
    res = {}
    for method in methods:
        summ = _sur.surrogate_mfdfa(x, method, ctx.seed, int(p["replicas"]), **kw)
        rows = []
        for k, r in enumerate(summ.replicas):
            rows.extend((k, summ.seeds[k], qq, hh, se) for qq, hh, se in zip(r.curve.q, r.curve.h, r.curve.stderr))
        write_csv(out / f"surrogate_{method}_hq.csv", ["replica", "seed", "q", "h", "stderr"], rows)
        d = summ.as_dict()
        write_json(out / f"surrogate_{method}.json", d)
        res[method] = d["pooled"]
    return res


def do_lppl(ctx: Context, p: dict, out: Path) -> dict:
    if ctx.series is None:
        raise ValueError("lppl needs a timestamped price input")
    if p.get("t_c") is None:
        raise ValueError("lppl needs t_c")
    tc = parse_time(_iso(p["t_c"]))
    s = ctx.series.slice(parse_time(_iso(p.get("from"))), parse_time(_iso(p.get("to"))))
    t, price = s.times.astype(float), np.asarray(s.prices, dtype=float)
    if p.get("daily", True):
        t, price = _lppl.daily_closes(s.times, price)
    side = t < tc if p["phase"] == "bubble" else t > tc
    t, logp = t[side], np.log(price[side])
    fit = _lppl.lppl_fit(t, logp, tc, p["phase"], float(p["lambda"]), (float(p["m_lo"]), float(p["m_hi"])), int(p["multistart"]))
    write_json(out / "lppl.json", fit.as_dict())
    write_csv(out / "lppl_fit.csv", ["t", "log_price", "fitted"], zip(t, logp, _lppl.lppl_eval(fit.params, t)))
    return fit.as_dict()


RUNNERS: dict[str, Callable] = {
    "tails": do_tails,
    "acf": do_acf,
    "mfdfa": do_mfdfa,
    "hurst_roll": do_hurst_roll,
    "mfcca": do_mfcca,
    "rho": do_rho,
    "lppl": do_lppl,
}


# -------------------------------------------------------------- driver


def run_period(ctx: Context, analyses: dict, out: Path, manifest_extra: dict | None = None) -> dict:
    """Run the selected analyses for one period; always writes a manifest."""
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    error = None
    for name, params in analyses.items():
        t0 = time.perf_counter()
        log.info("%s: %s", ctx.name, name)
        try:
            if name == "surrogate":
                mf = copy.deepcopy(ANALYSIS_DEFAULTS["mfdfa"])
                mf.update(analyses.get("mfdfa") or {})
                do_surrogate(ctx, params, out, mf)
            else:
                RUNNERS[name](ctx, params, out)
        except Exception as exc:  # surfaced in the manifest and re-raised by the caller
            error = {"module": name, "params": params, "message": f"{type(exc).__name__}: {exc}"}
            timings[name] = time.perf_counter() - t0
            break
        timings[name] = time.perf_counter() - t0
    files = {f.name: sha256_file(f) for f in sorted(out.iterdir()) if f.is_file() and f.name != "manifest.json"}
    manifest = {
        "tool": "marketmaturity",
        "version": __version__,
        "period": ctx.name,
        "status": "incomplete" if error else "complete",
        "analyses": list(analyses),
        "error": error,
        "files": files,
        "timings": timings,
    }
    manifest.update(manifest_extra or {})
    write_json(out / "manifest.json", manifest)
    return manifest


def run_pipeline(cfg: dict) -> dict[str, dict]:
    """Execute a resolved config; returns the per-period manifests.

    Raises `PipelineError` (after writing the manifests so far) when any
    analysis fails, and `FileNotFoundError` before creating anything when
    the input is missing.
    """
    if not cfg.get("input"):
        raise ValueError("config has no input")
    inp = Path(cfg["input"])
    if not inp.is_file():
        raise FileNotFoundError(f"input file not found: {inp}")
    series, diag = load_series(inp, cfg.get("schema"), (None, None), int(cfg["bin_seconds"]))
    data_hash = sha256_file(inp)
    chash = config_hash(cfg)
    root = Path(cfg["out"])
    manifests = {}
    failure = None
    for name, per in cfg["periods"].items():
        t0, t1 = parse_time(per["from"]), parse_time(per["to"])
        sub = series.slice(t0, t1)
        pdiag = {
            "rows_read": diag.rows_read,
            "duplicates": diag.duplicates,
            "bins": len(sub),
            "filled_bins": int(np.count_nonzero(sub.filled)),
            "period": [t0, t1],
        }
        ctx = Context(name, sub, delta_t=int(cfg["delta_t"]), seed=int(cfg["seed"]))
        extra = {"config_hash": chash, "data_hash": data_hash, "config": cfg, "diagnostics": pdiag}
        m = run_period(ctx, cfg["analyses"], root / name, extra)
        manifests[name] = m
        if m["error"] and failure is None:
            failure = m["error"]
    if failure:
        raise PipelineError(failure["module"], failure["params"], failure["message"])
    return manifests


# --------------------------------------------------------------- report


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8")) if path.is_file() else None


def _rho4_s1000(path: Path):
    if not path.is_file():
        return None
    best = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if abs(float(row["q"]) - 4.0) > 1e-9:
                continue
            d = abs(math.log(float(row["s"]) / 1000.0))
            if best is None or d < best[0]:
                best = (d, float(row["rho"]))
    return None if best is None else best[1]


def period_dirs(bundle: Path) -> list[Path]:
    return sorted(p for p in Path(bundle).iterdir() if p.is_dir() and (p / "manifest.json").is_file())


def emit_report(bundle: str | Path) -> dict:
    """Headline numbers per period from a finished bundle."""
    bundle = Path(bundle)
    if not bundle.is_dir():
        raise FileNotFoundError(f"no bundle at {bundle}")
    dirs = period_dirs(bundle)
    if (bundle / "manifest.json").is_file():
        dirs = [bundle]
    if not dirs:
        raise ValueError(f"{bundle} holds no period manifests")
    summary = {}
    for d in dirs:
        man = _read_json(d / "manifest.json")
        if man.get("status") != "complete":
            raise ValueError(f"period {d.name} is incomplete: {man.get('error')}")
        tail = _read_json(d / "tailfit.json") or {}
        mf = _read_json(d / "mfdfa.json") or {}
        cc = _read_json(d / "mfcca.json") or {}
        lp = _read_json(d / "lppl.json") or {}
        summary[man.get("period", d.name)] = {
            "gamma": tail.get("gamma"),
            "gamma_stderr": tail.get("stderr"),
            "H": mf.get("H"),
            "H_stderr": mf.get("H_stderr"),
            "delta_alpha": mf.get("delta_alpha"),
            "asymmetry": mf.get("asymmetry"),
            "lambda_gap_q4": cc.get("lambda_gap_q4"),
            "rho4_s1000": _rho4_s1000(d / "rho.csv"),
            "lppl_spearman_rho": lp.get("spearman_rho"),
        }
    return summary


def values_context(name: str, values: dict[str, np.ndarray], seed: int = 0) -> Context:
    """Context over plain value series (no prices), for value-file inputs."""
    return Context(name, None, {k: np.asarray(v, dtype=float) for k, v in values.items()}, 1, seed)


def load_values_file(path: str | Path, column: str | None = None) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return read_values(p, column)

