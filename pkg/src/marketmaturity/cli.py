"""Command-line entry point.

Every analysis subcommand is a one-analysis run of the batch pipeline, so
flag defaults, output files and manifests match what ``run`` produces.
Exit status: 0 on success, 1 when an analysis fails, 2 for bad usage or
unreadable input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import pipeline as pl
from . import surrogate as sur
from ._io import json_text, write_csv, write_json, write_values
from .ingest import IngestError, load_series, parse_time, zero_return_runs

log = logging.getLogger("marketmaturity")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _schema(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        key, _, col = part.partition("=")
        if not col:
            raise UsageError(f"--schema entries look like key=column, got {part!r}")
        out[key.strip()] = col.strip()
    return out


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--input", help="price CSV (timestamp, price/close, volume columns)")
    p.add_argument("--schema", help="column mapping, e.g. timestamp=time,price=close,volume_base=vol")
    p.add_argument("--from", dest="t_from", help="period start (ISO date or epoch seconds, inclusive)")
    p.add_argument("--to", dest="t_to", help="period end (exclusive)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="YAML run config supplying defaults for this analysis")
    p.add_argument("--bin-seconds", type=int, default=None)
    p.add_argument("--delta-t", type=int, default=None, help="return lag in bins")


def _values_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--values", help="headered CSV with one value column, instead of --input")
    p.add_argument("--column", help="column of --values to read (default: last)")


def _q_opts(p: argparse.ArgumentParser, qmin: float, qmax: float) -> None:
    p.add_argument("--q-min", type=float, default=qmin)
    p.add_argument("--q-max", type=float, default=qmax)
    p.add_argument("--q-step", type=float, default=0.2)


def _scale_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s-min", type=int)
    p.add_argument("--s-max", type=int)
    p.add_argument("--n-scales", type=int, default=40)
    p.add_argument("--spacing", choices=["log", "dyadic"], default="log")
    p.add_argument("--order", type=int, default=2, help="detrending polynomial order m")
    p.add_argument("--fit-lo", type=int)
    p.add_argument("--fit-hi", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marketmaturity", description="Tail, correlation, multifractal and log-periodic analysis of price series.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="regularize a price CSV and report gaps")
    _common(p)

    p = sub.add_parser("tails", help="ccdf and Hill tail exponent")
    _common(p)
    _values_opts(p)
    p.add_argument("--series", default="returns")
    p.add_argument("--tail-fraction", type=float, default=0.01)
    p.add_argument("--mode", choices=["fixed-fraction", "ks-scan"], default="ks-scan")

    p = sub.add_parser("acf", help="autocorrelation of returns and volatility")
    _common(p)
    _values_opts(p)
    p.add_argument("--series", default="returns,volatility")
    p.add_argument("--max-lag", type=int, default=100_000)
    p.add_argument("--points-per-decade", type=int, default=20)

    p = sub.add_parser("mfdfa", help="F(q,s), h(q) and f(alpha)")
    _common(p)
    _values_opts(p)
    p.add_argument("--series", default="returns")
    _q_opts(p, -4.0, 4.0)
    _scale_opts(p)

    p = sub.add_parser("hurst-roll", help="rolling H = h(2)")
    _common(p)
    _values_opts(p)
    p.add_argument("--series", default="returns")
    p.add_argument("--windows", choices=["calendar", "fixed"], default=None)
    p.add_argument("--window-bins", type=int, default=43_200)
    p.add_argument("--step-bins", type=int)
    p.add_argument("--zero-cap", type=float, default=0.5)
    p.add_argument("--min-window", type=int, default=40_000)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--fit-lo", type=int)
    p.add_argument("--fit-hi", type=int)

    for name, helptext in (("mfcca", "cross fluctuation functions and lambda_q"), ("rho", "q-dependent detrended cross-correlation")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--x", default=None, help="series kind with --input, else a values CSV")
        p.add_argument("--y", default=None, help="series kind with --input, else a values CSV")
        if name == "mfcca":
            _q_opts(p, 0.4, 4.0)
            p.add_argument("--q-fit-lo", type=float, default=1.0)
            p.add_argument("--q-fit-hi", type=float, default=4.0)
            _scale_opts(p)
        else:
            p.add_argument("--q", default="1,2,3,4")
            p.add_argument("--s-min", type=int, default=100)
            p.add_argument("--s-max", type=int, default=1000)
            p.add_argument("--n-scales", type=int, default=20)
            p.add_argument("--order", type=int, default=2)

    p = sub.add_parser("surrogate", help="shuffled or phase-randomized replicas")
    _common(p)
    _values_opts(p)
    p.add_argument("--series", default="returns")
    p.add_argument("--method", choices=["shuffle", "phase"], required=True)
    p.add_argument("--replicas", type=int, default=10)
    p.add_argument("--analyze", action="store_true", help="also run MFDFA on original and replicas")

    p = sub.add_parser("synth", help="synthetic oracle series")
    ss = p.add_subparsers(dest="kind", required=True)
    c = ss.add_parser("cascade")
    c.add_argument("--levels", type=int, default=16)
    c.add_argument("--a", type=float, default=0.6)
    c.add_argument("--seed", type=int, default=None, help="randomize branch order per cell")
    c.add_argument("--out", required=True, help="output CSV file")
    n = ss.add_parser("noise")
    n.add_argument("--n", type=int, required=True)
    n.add_argument("--marginal", choices=["gaussian", "student-t"], default="gaussian")
    n.add_argument("--df", type=float)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", required=True, help="output CSV file")

    p = sub.add_parser("lppl", help="log-periodic fit at fixed t_c and lambda")
    _common(p)
    p.add_argument("--tc", required=True)
    p.add_argument("--phase", choices=["bubble", "antibubble"], default="bubble")
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--m-lo", type=float, default=0.1)
    p.add_argument("--m-hi", type=float, default=0.9)
    p.add_argument("--multistart", type=int, default=9)
    p.add_argument("--minute", action="store_true", help="fit every bin instead of daily closes")

    p = sub.add_parser("run", help="run a YAML config")
    _common(p, out_required=False)

    p = sub.add_parser("report", help="summarize a finished bundle")
    p.add_argument("bundle", nargs="?")
    p.add_argument("--out", help="bundle directory (alternative to the positional)")
    return ap


# ---------------------------------------------------------------------------


def _config_params(args, name: str) -> dict:
    if not getattr(args, "config", None):
        return {}
    cfg = pl.load_config(args.config)
    return dict((cfg.get("analyses") or {}).get(name) or (cfg.get("analyses") or {}).get(name.replace("_", "-")) or {})


def _base_config(args) -> dict:
    cfg = pl.load_config(args.config) if getattr(args, "config", None) else {}
    for key, attr in (("input", "input"), ("bin_seconds", "bin_seconds"), ("delta_t", "delta_t"), ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "schema", None):
        cfg["schema"] = _schema(args.schema)
    return cfg


def _price_context(args, cfg: dict, period=True) -> pl.Context:
    path = Path(cfg["input"])
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    series, _ = load_series(path, cfg.get("schema"), (None, None), int(cfg.get("bin_seconds") or 60))
    if period:
        series = series.slice(parse_time(args.t_from), parse_time(args.t_to))
    return pl.Context("cli", series, delta_t=int(cfg.get("delta_t") or 1), seed=int(cfg.get("seed") or 0))


def _context(args, cfg: dict, needs=("values",)) -> pl.Context:
    if getattr(args, "values", None):
        v = pl.load_values_file(args.values, args.column)
        return pl.values_context("cli", {"values": v}, int(cfg.get("seed") or 0))
    if not cfg.get("input"):
        raise UsageError("give --input (price CSV) or --values")
    return _price_context(args, cfg)


def _run_one(args, name: str, params: dict, ctx: pl.Context) -> int:
    merged = dict(pl.ANALYSIS_DEFAULTS[name])
    merged.update(_config_params(args, name))
    merged.update({k: v for k, v in params.items() if v is not None})
    analyses = {name: merged}
    out = Path(args.out)
    man = pl.run_period(ctx, analyses, out, {"config": pl._plain({"analyses": analyses})})
    if man["error"]:
        err = man["error"]
        print(f"error in {err['module']}: {err['message']} (params: {err['params']})", file=sys.stderr)
        return 1
    for f in man["files"]:
        print(out / f)
    return 0


def cmd_ingest(args) -> int:
    cfg = _base_config(args)
    if not cfg.get("input"):
        raise UsageError("--input is required")
    path = Path(cfg["input"])
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    period = (parse_time(args.t_from), parse_time(args.t_to))
    series, diag = load_series(path, cfg.get("schema"), period, int(cfg.get("bin_seconds") or 60))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "series.csv",
        ["timestamp", "price", "volume_base", "volume_quote", "filled"],
        zip(series.times, series.prices, series.volumes_base, series.volumes_quote, series.filled),
    )
    write_csv(out / "zero_runs.csv", ["start_index", "run_length"], zero_return_runs(series))
    write_json(out / "diagnostics.json", diag.as_dict())
    print(json_text(diag.as_dict()), end="")
    return 0


def cmd_tails(args) -> int:
    cfg = _base_config(args)
    ctx = _context(args, cfg)
    series = "values" if args.values else args.series
    return _run_one(args, "tails", {"series": series, "tail_fraction": args.tail_fraction, "mode": args.mode}, ctx)


def cmd_acf(args) -> int:
    cfg = _base_config(args)
    ctx = _context(args, cfg)
    kinds = ["values"] if args.values else [k.strip() for k in args.series.split(",")]
    return _run_one(args, "acf", {"series": kinds, "max_lag": args.max_lag, "points_per_decade": args.points_per_decade}, ctx)


def _mf_params(args) -> dict:
    return {
        "q_min": args.q_min,
        "q_max": args.q_max,
        "q_step": args.q_step,
        "s_min": args.s_min,
        "s_max": args.s_max,
        "n_scales": args.n_scales,
        "spacing": args.spacing,
        "order": args.order,
        "fit_lo": args.fit_lo,
        "fit_hi": args.fit_hi,
    }


def cmd_mfdfa(args) -> int:
    cfg = _base_config(args)
    ctx = _context(args, cfg)
    params = _mf_params(args)
    params["series"] = "values" if args.values else args.series
    return _run_one(args, "mfdfa", params, ctx)


def cmd_hurst_roll(args) -> int:
    cfg = _base_config(args)
    ctx = _context(args, cfg)
    windows = args.windows or ("fixed" if args.values else "calendar")
    params = {
        "series": "values" if args.values else args.series,
        "windows": windows,
        "window_bins": args.window_bins,
        "step_bins": args.step_bins,
        "zero_cap": args.zero_cap,
        "min_window": args.min_window,
        "order": args.order,
        "fit_lo": args.fit_lo,
        "fit_hi": args.fit_hi,
    }
    return _run_one(args, "hurst_roll", params, ctx)


def _pair_context(args, cfg: dict) -> tuple[pl.Context, str, str]:
    if cfg.get("input"):
        ctx = _price_context(args, cfg)
        return ctx, args.x or "volatility", args.y or "volume_base"
    if not (args.x and args.y):
        raise UsageError("give --input with series kinds, or --x and --y value files")
    x = pl.load_values_file(args.x)
    y = pl.load_values_file(args.y)
    return pl.values_context("cli", {"x": x, "y": y}, int(cfg.get("seed") or 0)), "x", "y"


def cmd_mfcca(args) -> int:
    cfg = _base_config(args)
    ctx, x, y = _pair_context(args, cfg)
    params = _mf_params(args)
    params.update({"x": x, "y": y, "q_fit_lo": args.q_fit_lo, "q_fit_hi": args.q_fit_hi})
    return _run_one(args, "mfcca", params, ctx)


def cmd_rho(args) -> int:
    cfg = _base_config(args)
    ctx, x, y = _pair_context(args, cfg)
    params = {"x": x, "y": y, "q": _floats(args.q), "s_min": args.s_min, "s_max": args.s_max, "n_scales": args.n_scales, "order": args.order}
    return _run_one(args, "rho", params, ctx)


def cmd_surrogate(args) -> int:
    cfg = _base_config(args)
    ctx = _context(args, cfg)
    seed = int(cfg.get("seed") or 0)
    series = "values" if args.values else args.series
    x = ctx.get(series)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(sur.replica_seeds(seed, args.replicas)):
        fn = sur.shuffle if args.method == "shuffle" else sur.phase_randomize
        path = write_values(out / f"surrogate_{args.method}_{k:03d}.csv", fn(x, s))
        print(path)
    if args.analyze:
        return _run_one(args, "surrogate", {"series": series, "method": [args.method], "replicas": args.replicas}, ctx)
    return 0


def cmd_synth(args) -> int:
    if args.kind == "cascade":
        x = sur.binomial_cascade(args.levels, args.a, args.seed)
    else:
        x = sur.white_noise(args.n, args.seed, args.marginal, args.df)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    print(write_values(out, x))
    return 0


def cmd_lppl(args) -> int:
    cfg = _base_config(args)
    if not cfg.get("input"):
        raise UsageError("--input is required")
    ctx = _price_context(args, cfg, period=False)
    params = {
        "t_c": args.tc,
        "phase": args.phase,
        "lambda": args.lam,
        "from": args.t_from,
        "to": args.t_to,
        "m_lo": args.m_lo,
        "m_hi": args.m_hi,
        "multistart": args.multistart,
        "daily": not args.minute,
    }
    return _run_one(args, "lppl", params, ctx)


def cmd_run(args) -> int:
    cfg = pl.load_config(args.config) if args.config else {}
    overrides = {
        "input": args.input,
        "out": args.out,
        "seed": args.seed,
        "bin_seconds": args.bin_seconds,
        "delta_t": args.delta_t,
        "schema": _schema(args.schema),
    }
    if args.t_from or args.t_to:
        overrides["periods"] = {"custom": {"from": args.t_from, "to": args.t_to}}
    resolved = pl.resolve_config(cfg, overrides)
    if not resolved["analyses"]:
        raise UsageError("config selects no analyses")
    try:
        manifests = pl.run_pipeline(resolved)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in manifests:
        print(Path(resolved["out"]) / name)
    return 0


def cmd_report(args) -> int:
    bundle = args.bundle or args.out
    if not bundle:
        raise UsageError("give the bundle directory")
    summary = pl.emit_report(bundle)
    path = Path(bundle) / "summary.json"
    write_json(path, summary)
    print(json_text(summary), end="")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "tails": cmd_tails,
    "acf": cmd_acf,
    "mfdfa": cmd_mfdfa,
    "hurst-roll": cmd_hurst_roll,
    "mfcca": cmd_mfcca,
    "rho": cmd_rho,
    "surrogate": cmd_surrogate,
    "synth": cmd_synth,
    "lppl": cmd_lppl,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FileNotFoundError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
