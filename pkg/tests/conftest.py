from datetime import date, datetime

import numpy as np
import pandas as pd
import pytest

from evtrade.marketdata import DataBundle, PriceTable, RawEvent, StockInfo
from evtrade.synth import SynthSpec, synth_universe


def make_table(close, open_=None, dates=None, tickers=None, benchmarks=None, volume=1e5, shares=1e6):
    """PriceTable from a (n_tickers, n_days) close array; NaN marks a missing bar."""
    close = np.atleast_2d(np.asarray(close, dtype=float))
    n, T = close.shape
    dates = dates or [d.date() for d in pd.bdate_range("2022-01-03", periods=T)]
    tickers = tickers or [f"T{i}" for i in range(n)]
    open_ = close.copy() if open_ is None else np.atleast_2d(np.asarray(open_, dtype=float))
    missing = np.isnan(close)
    vol = np.where(missing, np.nan, volume)
    sh = np.where(missing, np.nan, shares)
    return PriceTable(dates, tickers, open_, close, vol, sh, benchmarks)


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(n_stocks=80, n_days=260, n_events=60, seed=3, noise=0.0)
    return synth_universe(spec)


@pytest.fixture(scope="session")
def noisy_synth():
    spec = SynthSpec(n_stocks=120, n_days=300, n_events=120, seed=11, noise=0.01, distinct_tickers=False)
    return synth_universe(spec)


@pytest.fixture
def tiny_bundle():
    """Two stocks, one benchmark, three weekdays around a weekend."""
    days = [date(2024, 1, 4), date(2024, 1, 5), date(2024, 1, 8)]
    table = make_table([[10.0, 10.5, 10.2], [20.0, 19.0, 19.5]], dates=days,
                       benchmarks={"IDX": np.array([100.0, 101.0, 100.5])})
    events = [RawEvent("E1", "T0", datetime(2024, 1, 5, 14, 0), "dividend", "n1")]
    meta = {"T0": StockInfo("banks", "IDX"), "T1": StockInfo("tech", "IDX")}
    return DataBundle(table, events, meta)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
