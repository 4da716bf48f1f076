import json

import numpy as np
import pytest

from marketmaturity.ingest import (
    IngestError,
    PriceRecord,
    load_csv,
    load_series,
    regularize,
    zero_return_runs,
)

from conftest import write_price_csv


def recs(minutes, prices):
    return [PriceRecord(60 * m, p, 1.0) for m, p in zip(minutes, prices)]


def test_load_three_rows_sorted(tmp_path):
    p = write_price_csv(tmp_path / "a.csv", [(180, 3.0, 1), (60, 1.0, 1), (120, 2.0, 1)])
    records, diag = load_csv(p)
    assert [r.timestamp for r in records] == [60, 120, 180]
    assert [r.price for r in records] == [1.0, 2.0, 3.0]
    assert diag.rows_read == 3 and diag.duplicates == 0


def test_zero_price_names_line(tmp_path):
    p = write_price_csv(tmp_path / "a.csv", [(60, 1.0, 1), (120, 0, 1), (180, 3.0, 1)])
    with pytest.raises(IngestError, match="line 3"):
        load_csv(p)


def test_unparseable_row_names_line(tmp_path):
    p = write_price_csv(tmp_path / "a.csv", [(60, 1.0, 1), ("abc", 2.0, 1)])
    with pytest.raises(IngestError, match="line 3"):
        load_csv(p)


def test_missing_file():
    with pytest.raises(IngestError, match="cannot read"):
        load_csv("/nonexistent/prices.csv")


def test_duplicates_keep_last(tmp_path):
    rows = [(60, 1.0, 1), (120, 2.0, 1), (120, 2.5, 1), (180, 3.0, 1), (240, 4.0, 1)]
    records, diag = load_csv(write_price_csv(tmp_path / "a.csv", rows))
    assert len(records) == 4
    assert diag.duplicates == 1
    assert records[1].price == 2.5


def test_millisecond_timestamps(tmp_path):
    rows = [(1_500_000_000_000, 1.0, 1), (1_500_000_060_000, 2.0, 1)]
    records, _ = load_csv(write_price_csv(tmp_path / "a.csv", rows))
    assert [r.timestamp for r in records] == [1_500_000_000, 1_500_000_060]


def test_period_half_open(tmp_path):
    rows = [(60 * i, 1.0 + i, 1) for i in range(10)]
    records, diag = load_csv(write_price_csv(tmp_path / "a.csv", rows), period=(120, 300))
    assert [r.timestamp for r in records] == [120, 180, 240]
    assert diag.rows_dropped == 7


def test_schema_mapping(tmp_path):
    p = write_price_csv(tmp_path / "a.csv", [(60, 5.0, 2.0), (120, 6.0, 3.0)], header=("time", "close", "vol"))
    records, _ = load_csv(p, {"timestamp": "time", "price": "close", "volume_base": "vol"})
    assert records[1].price == 6.0 and records[1].volume_base == 3.0
    # default schema accepts "close" for price but not "time"
    with pytest.raises(IngestError, match="timestamp"):
        load_csv(p)


def test_forward_fill():
    s = regularize(recs([0, 1, 3], [10.0, 11.0, 12.0]))
    assert len(s) == 4
    np.testing.assert_array_equal(s.prices, [10.0, 11.0, 11.0, 12.0])
    np.testing.assert_array_equal(s.filled, [False, False, True, False])
    assert s.volumes_base[2] == 0 and s.volumes_quote[2] == 0


def test_regular_input_unchanged():
    r = recs(range(5), [1.0, 2.0, 3.0, 4.0, 5.0])
    s = regularize(r)
    np.testing.assert_array_equal(s.prices, [1, 2, 3, 4, 5])
    assert not s.filled.any()


def test_one_hour_grid():
    s = regularize(recs([0, 60], [1.0, 2.0]))
    assert len(s) == 61
    assert s.times[-1] - s.times[0] == 3600


def test_regularize_idempotent_and_fill_count():
    rng = np.random.default_rng(0)
    minutes = np.sort(rng.choice(500, 200, replace=False))
    s1 = regularize(recs(minutes, rng.uniform(1, 2, 200)))
    s2 = regularize(s1)
    for name in ("prices", "volumes_base", "volumes_quote", "filled"):
        np.testing.assert_array_equal(getattr(s1, name), getattr(s2, name))
    assert s1.filled.sum() == len(s1) - 200
    assert s1.start == s2.start


def test_quote_volume_derived():
    s = regularize([PriceRecord(0, 2.0, 3.0), PriceRecord(60, 4.0, 1.0)])
    np.testing.assert_array_equal(s.volumes_quote, [6.0, 4.0])


def test_regularize_needs_two_records():
    with pytest.raises(IngestError):
        regularize(recs([0], [1.0]))


@pytest.mark.parametrize(
    "prices, runs",
    [
        ([2.0, 2.0, 2.0, 3.0], [(0, 2)]),
        ([1.0, 2.0, 3.0, 4.0], []),
        ([1.0, 1.0, 2.0, 2.0, 2.0, 1.0], [(0, 1), (2, 2)]),
    ],
)
def test_zero_return_runs(prices, runs):
    assert zero_return_runs(prices) == runs


def test_zero_runs_sum_matches_filled_bins(price_csv):
    series, diag = load_series(price_csv)
    runs = zero_return_runs(series)
    r = np.diff(np.log(series.prices))
    assert sum(n for _, n in runs) == int(np.count_nonzero(r == 0))
    # every forward-filled bin produces a zero return into it
    assert sum(n for _, n in runs) >= diag.filled_bins
    assert json.loads(json.dumps(diag.as_dict()))["filled_bins"] == diag.filled_bins
