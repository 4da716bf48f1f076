"""Statistical markers of market maturity for high-frequency price series.

Modules: `ingest` (CSV loading, regular grid), `returns`, `stats` (tails,
autocorrelation), `mfdfa`, `mfcca`, `surrogate`, `lppl`, and `pipeline`
(config-driven batch runs). The command line lives in `cli`.
"""

__version__ = "0.1.0"
