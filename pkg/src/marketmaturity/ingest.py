"""Loading exchange exports and putting them on a regular time grid.

Bins with no trade are forward-filled (same price, zero volume) rather than
dropped, so every later return on such a bin is exactly zero and the grid
stays regular for the fluctuation analyses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

# Epoch values above this are taken to be milliseconds (1e11 s is year 5138).
MS_THRESHOLD = 100_000_000_000

DEFAULT_SCHEMA = {
    "timestamp": "timestamp",
    "price": ("price", "close"),
    "volume_base": ("volume", "volume_base"),
    "volume_quote": ("volume_quote",),
}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class PriceRecord:
    timestamp: int
    price: float
    volume_base: float = 0.0
    volume_quote: float | None = None

    def __post_init__(self):
        if not self.price > 0 or not math.isfinite(self.price):
            raise IngestError(f"non-positive price {self.price!r} at t={self.timestamp}")
        if self.volume_base < 0 or (self.volume_quote is not None and self.volume_quote < 0):
            raise IngestError(f"negative volume at t={self.timestamp}")


@dataclass
class Diagnostics:
    rows_read: int = 0
    rows_dropped: int = 0
    duplicates: int = 0
    filled_bins: int = 0
    period: tuple[int | None, int | None] = (None, None)

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "duplicates": self.duplicates,
            "filled_bins": self.filled_bins,
            "period": list(self.period),
        }


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Regular-grid prices; bin ``i`` sits at ``start + i * bin_seconds``."""

    start: int
    bin_seconds: int
    prices: np.ndarray
    volumes_base: np.ndarray
    volumes_quote: np.ndarray
    filled: np.ndarray  # True where the bin was forward-filled

    def __post_init__(self):
        n = len(self.prices)
        if n < 2:
            raise IngestError("a price series needs at least 2 bins")
        for name in ("volumes_base", "volumes_quote", "filled"):
            if len(getattr(self, name)) != n:
                raise IngestError(f"{name} length differs from prices")
        if self.bin_seconds <= 0:
            raise IngestError("bin_seconds must be positive")
        for arr in (self.prices, self.volumes_base, self.volumes_quote, self.filled):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def times(self) -> np.ndarray:
        return self.start + self.bin_seconds * np.arange(len(self), dtype=np.int64)

    def to_records(self) -> list[PriceRecord]:
        """Observed bins only; forward-filled bins are reconstructed by `regularize`."""
        t = self.times
        return [
            PriceRecord(int(t[i]), float(self.prices[i]), float(self.volumes_base[i]), float(self.volumes_quote[i]))
            for i in np.flatnonzero(~self.filled)
        ]

    def slice(self, t0: int | None = None, t1: int | None = None) -> "PriceSeries":
        """Bins with ``t0 <= time < t1``."""
        t = self.times
        lo = 0 if t0 is None else int(np.searchsorted(t, t0, side="left"))
        hi = len(self) if t1 is None else int(np.searchsorted(t, t1, side="left"))
        return PriceSeries(
            start=int(t[lo]) if lo < len(t) else self.start,
            bin_seconds=self.bin_seconds,
            prices=self.prices[lo:hi].copy(),
            volumes_base=self.volumes_base[lo:hi].copy(),
            volumes_quote=self.volumes_quote[lo:hi].copy(),
            filled=self.filled[lo:hi].copy(),
        )


def parse_time(value: str | int | None) -> int | None:
    """Epoch seconds from an int, a digit string or an ISO date (UTC assumed)."""
    if value is None or value == "":
        return None
    if isinstance(value, (int, np.integer)):
        return int(value)
    s = str(value).strip()
    if s.lstrip("-").isdigit():
        return int(s)
    dt = datetime.fromisoformat(s.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _resolve_schema(header: Sequence[str], schema: Mapping[str, str | Sequence[str]] | None) -> dict[str, int | None]:
    merged: dict = dict(DEFAULT_SCHEMA)
    if schema:
        merged.update(schema)
    lower = [h.strip().lower() for h in header]
    cols: dict[str, int | None] = {}
    for key, names in merged.items():
        if isinstance(names, str):
            names = (names,)
        idx = next((lower.index(n.lower()) for n in names if n and n.lower() in lower), None)
        cols[key] = idx
    for required in ("timestamp", "price"):
        if cols[required] is None:
            raise IngestError(f"CSV header {list(header)} has no column for {required!r} (looked for {merged[required]})")
    return cols


def _epoch_seconds(raw: str) -> int:
    v = float(raw)
    if not math.isfinite(v) or v != int(v):
        raise ValueError(raw)
    iv = int(v)
    if abs(iv) >= MS_THRESHOLD:
        iv //= 1000
    return iv


def load_csv(
    path: str | Path,
    schema: Mapping[str, str | Sequence[str]] | None = None,
    period: tuple[int | None, int | None] = (None, None),
) -> tuple[list[PriceRecord], Diagnostics]:
    """Parse a price CSV into time-sorted records restricted to ``[t0, t1)``.

    ``schema`` maps ``timestamp``, ``price``, ``volume_base`` and
    ``volume_quote`` to column names (case-insensitive); unmapped keys fall
    back to `DEFAULT_SCHEMA`. Timestamps may be epoch seconds or
    milliseconds. On duplicate timestamps the later row wins.
    """
    path = Path(path)
    t0, t1 = period
    diag = Diagnostics(period=(t0, t1))
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    by_time: dict[int, PriceRecord] = {}
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        cols = _resolve_schema(header, schema)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            diag.rows_read += 1
            try:
                ts = _epoch_seconds(row[cols["timestamp"]])
                price = float(row[cols["price"]])
                vb = float(row[cols["volume_base"]]) if cols["volume_base"] is not None else 0.0
                vq = float(row[cols["volume_quote"]]) if cols["volume_quote"] is not None else None
            except (ValueError, IndexError):
                raise IngestError(f"{path}: line {lineno}: unparseable row {row!r}") from None
            if not price > 0 or not math.isfinite(price):
                raise IngestError(f"{path}: line {lineno}: non-positive price {row[cols['price']]!r}")
            if (t0 is not None and ts < t0) or (t1 is not None and ts >= t1):
                diag.rows_dropped += 1
                continue
            try:
                rec = PriceRecord(ts, price, vb, vq)
            except IngestError as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from None
            if ts in by_time:
                diag.duplicates += 1
            by_time[ts] = rec
    records = [by_time[t] for t in sorted(by_time)]
    return records, diag


def regularize(
    records: Iterable[PriceRecord] | PriceSeries,
    bin_seconds: int = 60,
    diagnostics: Diagnostics | None = None,
) -> PriceSeries:
    """Place records on a ``bin_seconds`` grid from the first to the last record.

    Timestamps are floored to their bin; several records in one bin keep the
    last. Empty bins repeat the previous price with zero volume and are
    marked in ``filled``. Passing a `PriceSeries` re-grids its observed bins,
    so the operation is idempotent.
    """
    if bin_seconds <= 0:
        raise IngestError("bin_seconds must be positive")
    if isinstance(records, PriceSeries):
        records = records.to_records()
    recs = sorted(records, key=lambda r: r.timestamp)
    if len(recs) < 2:
        raise IngestError("regularize needs at least 2 records")
    start = recs[0].timestamp - recs[0].timestamp % bin_seconds
    last = recs[-1].timestamp - recs[-1].timestamp % bin_seconds
    n = (last - start) // bin_seconds + 1
    if n < 2:
        raise IngestError("records span fewer than 2 bins")

    idx = np.array([(r.timestamp - start) // bin_seconds for r in recs], dtype=np.int64)
    price = np.array([r.price for r in recs])
    vb = np.array([r.volume_base for r in recs])
    vq = np.array([r.volume_base * r.price if r.volume_quote is None else r.volume_quote for r in recs])

    # keep the last record per bin
    keep = np.ones(len(idx), dtype=bool)
    keep[:-1] = idx[1:] != idx[:-1]
    same_bin = int(len(idx) - keep.sum())
    idx, price, vb, vq = idx[keep], price[keep], vb[keep], vq[keep]

    observed = np.zeros(n, dtype=bool)
    observed[idx] = True
    # forward-fill: each bin takes the price of the latest observed bin at or before it
    src = np.maximum.accumulate(np.where(observed, np.arange(n), 0))
    prices = np.zeros(n)
    prices[idx] = price
    prices = prices[src]
    volumes_base = np.zeros(n)
    volumes_base[idx] = vb
    volumes_quote = np.zeros(n)
    volumes_quote[idx] = vq

    if diagnostics is not None:
        diagnostics.duplicates += same_bin
        diagnostics.filled_bins = int(n - observed.sum())
    return PriceSeries(
        start=int(start),
        bin_seconds=int(bin_seconds),
        prices=prices,
        volumes_base=volumes_base,
        volumes_quote=volumes_quote,
        filled=~observed,
    )


def zero_return_runs(series: PriceSeries | Sequence[float]) -> list[tuple[int, int]]:
    """Maximal runs of exactly-zero one-bin log-returns as ``(start, length)``.

    Indices refer to the return sequence, where return ``i`` spans bins
    ``i`` and ``i + 1``.
    """
    prices = np.asarray(series.prices if isinstance(series, PriceSeries) else series, dtype=float)
    if len(prices) < 2:
        raise IngestError("need at least 2 prices")
    zero = np.log(prices[1:]) - np.log(prices[:-1]) == 0.0
    padded = np.concatenate(([False], zero, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def load_series(
    path: str | Path,
    schema: Mapping[str, str | Sequence[str]] | None = None,
    period: tuple[int | None, int | None] = (None, None),
    bin_seconds: int = 60,
) -> tuple[PriceSeries, Diagnostics]:
    records, diag = load_csv(path, schema, period)
    series = regularize(records, bin_seconds, diag)
    return series, diag
