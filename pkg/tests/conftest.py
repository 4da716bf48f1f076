import numpy as np
import pytest


def write_price_csv(path, rows, header=("timestamp", "price", "volume")):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def price_csv(tmp_path):
    """Two days of 1-minute random-walk prices with some gaps."""
    rng = np.random.default_rng(42)
    n = 2 * 1440
    start = 1_483_228_800  # 2017-01-01
    logp = np.log(1000.0) + np.cumsum(rng.standard_t(3, n) * 1e-3)
    keep = rng.random(n) > 0.05
    keep[0] = keep[-1] = True
    rows = [(start + 60 * i, f"{np.exp(logp[i]):.6f}", f"{rng.exponential(2.0):.4f}") for i in range(n) if keep[i]]
    return write_price_csv(tmp_path / "prices.csv", rows)
