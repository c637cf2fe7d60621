"""
Market-model abnormal returns, factor neutralization and CAR per event.

Timeline for an event whose signal day has calendar index ``s``::

    estimation window : [e0, e1]             (estimation_length days)
    lag               : (e1, w0)             (lag days, unused)
    event window      : [w0, w1] = [s+start, s+end]

All offsets are in trading days.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .marketdata import fmt_float
from .riskfactors import FactorError, exposure_matrix, factor_names, fit_premia, industry_codes

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ("event_id", "ticker", "t0", "car", "window_start", "window_end",
                  "missing_days", "alpha", "beta")


class EventStudyError(ValueError):
    """Base error; ``event_id`` is filled in when raised for a specific event."""

    event_id = None


class InsufficientHistoryError(EventStudyError):
    pass


class MarketModelError(EventStudyError):
    pass


class MissingDataError(EventStudyError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    estimation_length: int = 120
    lag: int = 5
    start: int = -1
    end: int = 2
    min_observations: int = 60
    max_missing_fraction: float = 0.5

    def __post_init__(self):
        if self.min_observations < 2:
            raise ValueError("min_observations must be >= 2")
        if self.estimation_length < self.min_observations:
            raise ValueError("estimation_length must be >= min_observations")
        if self.lag < 0:
            raise ValueError("lag must be >= 0")
        if self.start > self.end:
            raise ValueError("event window start must be <= end")
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ValueError("max_missing_fraction must lie in [0, 1]")

    @property
    def window_length(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class MarketModelFit:
    alpha: float
    beta: float
    residual_std: float
    n_obs: int


@dataclass
class EventCarResult:
    event_id: str
    ticker: str
    t0: object
    car: float
    window_start: date
    window_end: date
    missing_days: int
    alpha: float
    beta: float
    signal_day: date = None
    dates: tuple = ()
    ar_market: np.ndarray = field(default=None, repr=False)
    ar: np.ndarray = field(default=None, repr=False)
    car_market: float = None
    fit: MarketModelFit = None


def window_indices(signal_index, n_days, spec):
    """``((e0, e1), (w0, w1))`` calendar indices, inclusive."""
    w0, w1 = signal_index + spec.start, signal_index + spec.end
    e1 = w0 - spec.lag - 1
    e0 = e1 - spec.estimation_length + 1
    if e0 < 0:
        raise InsufficientHistoryError(
            f"estimation window needs {spec.estimation_length} days before day index {e1 + 1}; "
            f"only {e1 + 1} available")
    if w1 >= n_days:
        raise InsufficientHistoryError(f"event window ends at day index {w1}, past the calendar end")
    return (e0, e1), (w0, w1)


def resolve_event_windows(event, calendar, spec):
    """Estimation and event-window dates for ``event``."""
    s = calendar.signal_index(event.timestamp)
    (e0, e1), (w0, w1) = window_indices(s, len(calendar), spec)
    days = calendar.days
    return days[e0:e1 + 1], days[w0:w1 + 1]


def fit_market_model(stock_returns, benchmark_returns, min_observations=60):
    """OLS of stock on benchmark returns; NaN pairs are ignored."""
    y = np.asarray(stock_returns, dtype=float)
    x = np.asarray(benchmark_returns, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    n = len(x)
    if n < min_observations:
        raise MarketModelError(f"{n} paired observations; need {min_observations}")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = dx @ dx
    # a constant series can leave a rounding-sized sxx; test the spread directly
    if sxx == 0.0 or np.ptp(x) == 0.0:
        raise MarketModelError("benchmark returns have zero variance over the estimation window")
    beta = (dx @ (y - ym)) / sxx
    alpha = ym - beta * xm
    resid = y - alpha - beta * x
    dof = n - 2
    rstd = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    return MarketModelFit(float(alpha), float(beta), rstd, n)


def fit_market_models(Y, X, min_observations=60):
    """Row-wise market models for a panel; rows failing the preconditions get NaN."""
    ok = np.isfinite(X) & np.isfinite(Y)
    n = ok.sum(axis=1)
    Xz, Yz = np.where(ok, X, 0.0), np.where(ok, Y, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        xm = Xz.sum(axis=1) / n
        ym = Yz.sum(axis=1) / n
        dx = np.where(ok, X - xm[:, None], 0.0)
        dy = np.where(ok, Y - ym[:, None], 0.0)
        sxx = (dx * dx).sum(axis=1)
        beta = (dx * dy).sum(axis=1) / sxx
        alpha = ym - beta * xm
    hi = np.max(np.where(ok, X, -np.inf), axis=1, initial=-np.inf)
    lo = np.min(np.where(ok, X, np.inf), axis=1, initial=np.inf)
    bad = (n < min_observations) | ~(sxx > 0) | ~(hi > lo)
    alpha[bad] = np.nan
    beta[bad] = np.nan
    return alpha, beta


def market_abnormal_returns(fit, stock_returns, benchmark_returns):
    """AR^MR = r - (alpha + beta * r_m), elementwise; NaN where returns are missing."""
    r = np.asarray(stock_returns, dtype=float)
    rm = np.asarray(benchmark_returns, dtype=float)
    if r.size and not np.any(np.isfinite(r) & np.isfinite(rm)):
        raise MissingDataError("no returns available on the event dates")
    return r - (fit.alpha + fit.beta * rm)


def neutralize_abnormal_returns(ar_mr, exposures, premia):
    """AR = AR^MR - x . lambda for each day.

    ``exposures`` and ``premia`` are sequences (one per day) of equal-length
    vectors; a ``None`` premia entry is an error.
    """
    ar_mr = np.asarray(ar_mr, dtype=float)
    out = np.empty_like(ar_mr)
    for k, a in enumerate(ar_mr):
        if premia[k] is None:
            raise MissingDataError(f"no factor premia for event-window day {k}")
        out[k] = a - float(np.dot(exposures[k], premia[k]))
    return out


def cumulative_abnormal_return(ar):
    ar = np.asarray(ar, dtype=float)
    if ar.size == 0:
        raise MissingDataError("empty abnormal-return series")
    return float(np.sum(ar))


class EventStudy:
    """Runs the CAR pipeline over a DataBundle.

    Factor premia for an event window are fitted on the cross-section of
    market-adjusted returns computed with that window's own estimation period.
    Stocks with any event overlapping the estimation-to-event span are left out
    of the premia regression, unless that leaves too few stocks.
    """

    def __init__(self, bundle, spec=None, neutralize=True, min_clean=30):
        self.bundle = bundle
        self.spec = spec or WindowSpec()
        self.neutralize = neutralize
        self.min_clean = min_clean
        p = bundle.prices
        self.prices = p
        self.calendar = p.calendar
        self.returns = p.returns()
        bench_ret = {k: p.benchmark_returns(k) for k in p.benchmarks}
        self.bench_of = [bundle.benchmark_for(t) for t in p.tickers]
        self.market = np.vstack([bench_ret[b] for b in self.bench_of]) if p.tickers else np.empty((0, len(p.dates)))
        self.codes, self.industries = industry_codes(p.tickers, bundle.metadata)
        self.names = factor_names(self.industries)
        self._exposures = {}
        self._cross = {}
        self._event_spans = self._collect_event_spans(bundle.events)

    def _collect_event_spans(self, events):
        spans = {}
        n = len(self.calendar)
        for e in events:
            try:
                s = self.calendar.signal_index(e.timestamp)
            except ValueError:
                continue
            lo, hi = max(0, s + self.spec.start), min(n - 1, s + self.spec.end)
            spans.setdefault(self.prices.ticker_index(e.ticker), []).append((lo, hi))
        return spans

    def exposures(self, j):
        if j not in self._exposures:
            p = self.prices
            try:
                self._exposures[j] = exposure_matrix(p.close, p.volume, p.shares, self.codes, self.industries, j)
            except FactorError as err:
                self._exposures[j] = err
        em = self._exposures[j]
        if isinstance(em, FactorError):
            raise em
        return em

    def _clean_mask(self, lo, hi):
        mask = np.ones(len(self.prices.tickers), dtype=bool)
        for i, spans in self._event_spans.items():
            if any(a <= hi and b >= lo for a, b in spans):
                mask[i] = False
        return mask

    def cross_section(self, key):
        """Per-day premia for one (estimation, event) window pair, cached."""
        if key in self._cross:
            return self._cross[key]
        (e0, e1), (w0, w1) = key
        alpha, beta = fit_market_models(self.returns[:, e0:e1 + 1], self.market[:, e0:e1 + 1],
                                        self.spec.min_observations)
        ar = self.returns[:, w0:w1 + 1] - (alpha[:, None] + beta[:, None] * self.market[:, w0:w1 + 1])
        clean = self._clean_mask(e0, w1)
        premia = {}
        for k, j in enumerate(range(w0, w1 + 1)):
            try:
                em = self.exposures(j)
            except FactorError:
                premia[j] = None
                continue
            y = ar[em.rows, k]
            usable = np.isfinite(y)
            pick = usable & clean[em.rows]
            if pick.sum() < max(self.min_clean, len(self.names) + 1):
                pick = usable
            try:
                premia[j] = fit_premia(em.design(pick), y[pick], self.names, self.calendar.days[j])
            except FactorError as err:
                logger.warning("premia fit failed on %s: %s", self.calendar.days[j], err)
                premia[j] = None
        self._cross[key] = premia
        return premia

    def car(self, event):
        try:
            return self._car(event)
        except EventStudyError as err:
            err.event_id = event.event_id
            raise
        except (FactorError, ValueError, KeyError) as err:
            wrapped = EventStudyError(f"event {event.event_id}: {err}")
            wrapped.event_id = event.event_id
            raise wrapped from err

    def _car(self, event):
        spec = self.spec
        s = self.calendar.signal_index(event.timestamp)
        key = window_indices(s, len(self.calendar), spec)
        (e0, e1), (w0, w1) = key
        i = self.prices.ticker_index(event.ticker)
        fit = fit_market_model(self.returns[i, e0:e1 + 1], self.market[i, e0:e1 + 1], spec.min_observations)

        r_win = self.returns[i, w0:w1 + 1]
        m_win = self.market[i, w0:w1 + 1]
        present = np.isfinite(r_win) & np.isfinite(m_win)
        missing = int((~present).sum())
        if missing > spec.max_missing_fraction * spec.window_length or not present.any():
            raise MissingDataError(f"{missing} of {spec.window_length} event-window days missing")
        ar_mr = market_abnormal_returns(fit, r_win, m_win)[present]
        days = [j for j, ok in zip(range(w0, w1 + 1), present) if ok]

        if self.neutralize:
            premia = self.cross_section(key)
            xs, lams = [], []
            for j in days:
                em = self.exposures(j)
                x = em.vector(i)
                if x is None:
                    raise MissingDataError(f"{event.ticker} has no factor exposures on {self.calendar.days[j]}")
                xs.append(x)
                lams.append(None if premia[j] is None else premia[j].values)
            ar = neutralize_abnormal_returns(ar_mr, xs, lams)
        else:
            ar = ar_mr
        dates = tuple(self.calendar.days[j] for j in days)
        return EventCarResult(
            event_id=event.event_id, ticker=event.ticker, t0=event.timestamp,
            car=cumulative_abnormal_return(ar),
            window_start=self.calendar.days[w0], window_end=self.calendar.days[w1],
            missing_days=missing, alpha=fit.alpha, beta=fit.beta,
            signal_day=self.calendar.days[s], dates=dates, ar_market=ar_mr, ar=ar,
            car_market=cumulative_abnormal_return(ar_mr), fit=fit,
        )

    def run(self, events=None):
        """CAR for each event; failures are logged and returned separately."""
        events = self.bundle.events if events is None else events
        results, skipped = [], []
        for e in events:
            try:
                results.append(self.car(e))
            except EventStudyError as err:
                logger.warning("skipping event %s: %s", e.event_id, err)
                skipped.append((e.event_id, str(err)))
        return results, skipped


def compute_event_car(event, bundle, spec=None):
    return EventStudy(bundle, spec).car(event)


def write_results(results, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.event_id, r.ticker, r.t0.isoformat(), fmt_float(r.car), r.window_start.isoformat(),
                        r.window_end.isoformat(), r.missing_days, fmt_float(r.alpha), fmt_float(r.beta)])


def read_results(path):
    """Rows of a results file as dicts with parsed values."""
    from datetime import datetime

    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(RESULT_COLUMNS)}")
        for row in reader:
            out.append({
                "event_id": row["event_id"], "ticker": row["ticker"],
                "t0": datetime.fromisoformat(row["t0"]), "car": float(row["car"]),
                "window_start": date.fromisoformat(row["window_start"]),
                "window_end": date.fromisoformat(row["window_end"]),
                "missing_days": int(row["missing_days"]),
                "alpha": float(row["alpha"]), "beta": float(row["beta"]),
            })
    return out
