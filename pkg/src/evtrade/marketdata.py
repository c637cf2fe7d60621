"""
Market data ingestion and the trading calendar.

File layouts (comma-delimited, header required):

    prices    ticker,date,open,close,volume,shares_outstanding
    index     index_id,date,close
    events    event_id,ticker,timestamp,event_type,text_ref
    metadata  ticker,industry,cap_segment

Dates are ISO ``YYYY-MM-DD``; timestamps are ISO datetimes. Price tables are
stored wide (tickers x calendar days) with NaN where a stock has no bar, which
is how suspensions are represented.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .taxonomy import LabelError, parse_event_type

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("ticker", "date", "open", "close", "volume", "shares_outstanding")
INDEX_COLUMNS = ("index_id", "date", "close")
EVENT_COLUMNS = ("event_id", "ticker", "timestamp", "event_type", "text_ref")
METADATA_COLUMNS = ("ticker", "industry", "cap_segment")

MARKET_OPEN = time(9, 30)


class DataError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f", line {line}"
            where += ": "
        super().__init__(where + message)


def fmt_float(x):
    """Format a float so that it parses back to the identical value."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


@dataclass(frozen=True)
class PriceBar:
    date: date
    open: float
    close: float
    volume: float
    shares_outstanding: float | None = None

    def __post_init__(self):
        if not (self.open > 0):
            raise ValueError(f"open must be > 0, got {self.open}")
        if not (self.close > 0):
            raise ValueError(f"close must be > 0, got {self.close}")
        if not (self.volume >= 0):
            raise ValueError(f"volume must be >= 0, got {self.volume}")
        if self.shares_outstanding is not None and not (self.shares_outstanding > 0):
            raise ValueError("shares_outstanding must be > 0 when given")


@dataclass(frozen=True)
class StockInfo:
    industry: str
    cap_segment: str


@dataclass(frozen=True)
class RawEvent:
    event_id: str
    ticker: str
    timestamp: datetime
    event_type: str | None = None
    text_ref: str | None = None


class PriceTable:
    """Wide OHLCV storage aligned to a global trading calendar.

    ``open``, ``close``, ``volume`` and ``shares`` are ``(n_tickers, n_days)``
    float arrays with NaN marking days without a bar. ``benchmarks`` maps an
    index id to closes aligned to the calendar.
    """

    def __init__(self, dates, tickers, open, close, volume, shares, benchmarks=None):
        self.dates = tuple(dates)
        self.tickers = tuple(tickers)
        self.open = np.asarray(open, dtype=float)
        self.close = np.asarray(close, dtype=float)
        self.volume = np.asarray(volume, dtype=float)
        self.shares = np.asarray(shares, dtype=float)
        self.benchmarks = {k: np.asarray(v, dtype=float) for k, v in (benchmarks or {}).items()}
        shape = (len(self.tickers), len(self.dates))
        for name in ("open", "close", "volume", "shares"):
            if getattr(self, name).shape != shape:
                raise DataError(f"{name} array has shape {getattr(self, name).shape}, expected {shape}")
        for k, v in self.benchmarks.items():
            if v.shape != (len(self.dates),):
                raise DataError(f"benchmark {k} is not aligned to the calendar")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("calendar dates must be strictly increasing")
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("duplicate tickers")
        for a in (self.open, self.close, self.volume, self.shares):
            a.setflags(write=False)
        self._ticker_index = {t: i for i, t in enumerate(self.tickers)}
        self._date_index = {d: i for i, d in enumerate(self.dates)}

    @classmethod
    def from_bars(cls, bars, benchmarks=None):
        """Build from ``{ticker: [PriceBar, ...]}`` and ``{index_id: [(date, close), ...]}``."""
        benchmarks = benchmarks or {}
        if benchmarks:
            days = sorted({d for series in benchmarks.values() for d, _ in series})
        else:
            days = sorted({b.date for series in bars.values() for b in series})
        didx = {d: i for i, d in enumerate(days)}
        tickers = sorted(bars)
        shape = (len(tickers), len(days))
        arrays = {k: np.full(shape, np.nan) for k in ("open", "close", "volume", "shares")}
        for i, t in enumerate(tickers):
            seen = set()
            for b in bars[t]:
                if b.date in seen:
                    raise DataError(f"duplicate bar for ({t}, {b.date})")
                seen.add(b.date)
                j = didx.get(b.date)
                if j is None:
                    raise DataError(f"{t} has a bar on {b.date}, which is not a calendar day")
                arrays["open"][i, j] = b.open
                arrays["close"][i, j] = b.close
                arrays["volume"][i, j] = b.volume
                if b.shares_outstanding is not None:
                    arrays["shares"][i, j] = b.shares_outstanding
        bench = {}
        for k, series in benchmarks.items():
            v = np.full(len(days), np.nan)
            for d, c in series:
                v[didx[d]] = c
            bench[k] = v
        return cls(days, tickers, benchmarks=bench, **arrays)

    @property
    def calendar(self):
        return TradingCalendar(self.dates)

    def ticker_index(self, ticker):
        try:
            return self._ticker_index[ticker]
        except KeyError:
            raise KeyError(f"unknown ticker {ticker!r}") from None

    def date_index(self, day):
        return self._date_index[day]

    def has_ticker(self, ticker):
        return ticker in self._ticker_index

    def bars(self, ticker):
        i = self.ticker_index(ticker)
        out = []
        for j, d in enumerate(self.dates):
            if np.isnan(self.close[i, j]):
                continue
            sh = self.shares[i, j]
            out.append(PriceBar(d, self.open[i, j], self.close[i, j], self.volume[i, j],
                                None if np.isnan(sh) else sh))
        return out

    def returns(self):
        """Close-to-close simple returns; NaN on the first day and around gaps."""
        r = np.full(self.close.shape, np.nan)
        r[:, 1:] = self.close[:, 1:] / self.close[:, :-1] - 1.0
        return r

    def benchmark_returns(self, index_id):
        c = self.benchmarks[index_id]
        r = np.full(c.shape, np.nan)
        r[1:] = c[1:] / c[:-1] - 1.0
        return r

    def __eq__(self, other):
        if not isinstance(other, PriceTable):
            return NotImplemented
        if self.dates != other.dates or self.tickers != other.tickers:
            return False
        for name in ("open", "close", "volume", "shares"):
            if not np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True):
                return False
        if self.benchmarks.keys() != other.benchmarks.keys():
            return False
        return all(np.array_equal(v, other.benchmarks[k], equal_nan=True)
                   for k, v in self.benchmarks.items())

    def __repr__(self):
        return f"PriceTable({len(self.tickers)} tickers x {len(self.dates)} days)"


class TradingCalendar:
    """Ordered trading days; news between two opens belongs to the earlier day."""

    def __init__(self, days, open_time=MARKET_OPEN):
        self.days = tuple(days)
        if not self.days:
            raise DataError("calendar is empty")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise DataError("calendar days must be strictly increasing")
        self.open_time = open_time
        self._opens = [datetime.combine(d, open_time) for d in self.days]
        self._index = {d: i for i, d in enumerate(self.days)}

    def __len__(self):
        return len(self.days)

    def index(self, day):
        return self._index[day]

    def __contains__(self, day):
        return day in self._index

    @property
    def range_end(self):
        # the last day's signal interval has no next open; close it at midnight
        return datetime.combine(self.days[-1] + timedelta(days=1), time(0, 0))

    def signal_index(self, timestamp):
        if timestamp < self._opens[0] or timestamp >= self.range_end:
            raise DataError(
                f"timestamp {timestamp.isoformat()} outside calendar range "
                f"[{self._opens[0].isoformat()}, {self.range_end.isoformat()})"
            )
        return bisect.bisect_right(self._opens, timestamp) - 1

    def assign_signal_day(self, timestamp):
        return self.days[self.signal_index(timestamp)]


def assign_signal_day(timestamp, calendar):
    """Return the trading day ``t`` with ``open(t) <= timestamp < open(t+1)``."""
    return calendar.assign_signal_day(timestamp)


def _read_rows(path, columns):
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path=path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != columns:
            raise DataError(f"header must be {','.join(columns)}, got {header}", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise DataError(f"expected {len(columns)} fields, got {len(row)}", path=path, line=lineno)
            yield lineno, dict(zip(columns, (v.strip() for v in row)))


def _parse_date(s):
    return date.fromisoformat(s)


def load_index_series(path):
    """Read benchmark closes as ``{index_id: [(date, close), ...]}``."""
    series = {}
    seen = set()
    for lineno, row in _read_rows(path, INDEX_COLUMNS):
        try:
            d = _parse_date(row["date"])
            c = float(row["close"])
        except ValueError as e:
            raise DataError(str(e), path=path, line=lineno) from None
        if not c > 0:
            raise DataError(f"close must be > 0, got {c}", path=path, line=lineno)
        key = (row["index_id"], d)
        if key in seen:
            raise DataError(f"duplicate (index_id, date) {key}", path=path, line=lineno)
        seen.add(key)
        series.setdefault(row["index_id"], []).append((d, c))
    for k, s in series.items():
        s.sort()
    return series


def load_price_table(path, index_path=None):
    """Parse a prices file (and optionally the benchmark file) into a PriceTable."""
    bars = {}
    seen = set()
    for lineno, row in _read_rows(path, PRICE_COLUMNS):
        try:
            d = _parse_date(row["date"])
            sh = row["shares_outstanding"]
            bar = PriceBar(d, float(row["open"]), float(row["close"]), float(row["volume"]),
                           float(sh) if sh else None)
        except ValueError as e:
            raise DataError(str(e), path=path, line=lineno) from None
        key = (row["ticker"], d)
        if key in seen:
            raise DataError(f"duplicate (ticker, date) {row['ticker']},{d}", path=path, line=lineno)
        seen.add(key)
        bars.setdefault(row["ticker"], []).append(bar)
    benchmarks = load_index_series(index_path) if index_path is not None else None
    return PriceTable.from_bars(bars, benchmarks)


def write_price_table(table, path, index_path=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for i, t in enumerate(table.tickers):
            for j, d in enumerate(table.dates):
                if np.isnan(table.close[i, j]):
                    continue
                w.writerow([t, d.isoformat(), fmt_float(table.open[i, j]), fmt_float(table.close[i, j]),
                            fmt_float(table.volume[i, j]), fmt_float(table.shares[i, j])])
    if index_path is not None:
        with open(index_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(INDEX_COLUMNS)
            for k in sorted(table.benchmarks):
                for d, c in zip(table.dates, table.benchmarks[k]):
                    if not np.isnan(c):
                        w.writerow([k, d.isoformat(), fmt_float(c)])


def load_events(path, table=None):
    events = []
    seen = set()
    calendar = table.calendar if table is not None else None
    for lineno, row in _read_rows(path, EVENT_COLUMNS):
        try:
            ts = datetime.fromisoformat(row["timestamp"])
            et = parse_event_type(row["event_type"], allow_absent=True)
        except (ValueError, LabelError) as e:
            raise DataError(str(e), path=path, line=lineno) from None
        if row["event_id"] in seen:
            raise DataError(f"duplicate event_id {row['event_id']}", path=path, line=lineno)
        seen.add(row["event_id"])
        if table is not None:
            if not table.has_ticker(row["ticker"]):
                raise DataError(f"unknown ticker {row['ticker']}", path=path, line=lineno)
            calendar.signal_index(ts)
        events.append(RawEvent(row["event_id"], row["ticker"], ts, et, row["text_ref"] or None))
    return events


def write_events(events, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([e.event_id, e.ticker, e.timestamp.isoformat(), e.event_type or "", e.text_ref or ""])


def load_metadata(path):
    meta = {}
    for lineno, row in _read_rows(path, METADATA_COLUMNS):
        if row["ticker"] in meta:
            raise DataError(f"duplicate ticker {row['ticker']}", path=path, line=lineno)
        meta[row["ticker"]] = StockInfo(row["industry"], row["cap_segment"])
    return meta


def write_metadata(meta, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METADATA_COLUMNS)
        for t in sorted(meta):
            w.writerow([t, meta[t].industry, meta[t].cap_segment])


@dataclass
class DataBundle:
    """Everything the event study needs: prices, benchmarks, events, metadata."""

    prices: PriceTable
    events: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    FILES = {"prices": "prices.csv", "index": "index.csv", "events": "events.csv", "metadata": "metadata.csv"}

    def benchmark_for(self, ticker):
        """Benchmark index id for a stock: the index named by its cap segment.

        With a single benchmark series every stock uses it.
        """
        ids = self.prices.benchmarks
        if len(ids) == 1:
            return next(iter(ids))
        info = self.metadata.get(ticker)
        if info is None or info.cap_segment not in ids:
            raise DataError(f"no benchmark index for {ticker} (cap_segment must name an index_id)")
        return info.cap_segment

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        prices = load_price_table(d / cls.FILES["prices"], d / cls.FILES["index"])
        events = load_events(d / cls.FILES["events"], prices) if (d / cls.FILES["events"]).exists() else []
        meta = load_metadata(d / cls.FILES["metadata"]) if (d / cls.FILES["metadata"]).exists() else {}
        return cls(prices, events, meta)

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_price_table(self.prices, d / self.FILES["prices"], d / self.FILES["index"])
        write_events(self.events, d / self.FILES["events"])
        write_metadata(self.metadata, d / self.FILES["metadata"])
