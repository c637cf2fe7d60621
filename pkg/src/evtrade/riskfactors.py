"""
Price/volume style exposures plus industry dummies, and daily premia fits.

Exposures for trading day ``t`` use bars strictly before ``t``, so the premia
regression of day-``t`` returns never sees the response it explains.

Style definitions (trailing windows ending at ``t-1``):

    size        log(close * shares_outstanding)
    liquidity   mean(volume / shares_outstanding) over 20 days
    volatility  std of daily returns over 20 days
    momentum    return from t-121 to t-6 (120 days, skipping the last 5)
    reversal    return over the last 5 days

Each style is winsorized at +/-3 cross-sectional std, then z-scored.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np
import scipy.linalg

from .marketdata import fmt_float

logger = logging.getLogger(__name__)

STYLE_NAMES = ("size", "liquidity", "volatility", "momentum", "reversal")
LOOKBACK = 120
SHORT_WINDOW = 20
REVERSAL_WINDOW = 5
WINSOR_K = 3.0
MIN_CROSS_SECTION = 3


class FactorError(ValueError):
    pass


@dataclass(frozen=True)
class ExposureRow:
    ticker: str
    date: date
    styles: tuple  # z-units, ordered as STYLE_NAMES
    industry: str

    def __post_init__(self):
        if len(self.styles) != len(STYLE_NAMES) or not all(np.isfinite(self.styles)):
            raise ValueError("styles must be 5 finite values")


@dataclass
class DailyPremia:
    date: date | None
    names: tuple
    values: np.ndarray
    r2: float
    n_obs: int
    dropped: tuple = ()
    residuals: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        return dict(zip(self.names, self.values))


def factor_names(industries):
    return STYLE_NAMES + tuple(f"ind:{k}" for k in industries)


def raw_style_matrix(close, volume, shares, end):
    """Raw (unstandardized) styles from columns ``< end``.

    Returns ``(raw, eligible)`` where ``raw`` is ``(n, 5)``. A stock is eligible
    when it has closes at ``end-1``, ``end-6`` and ``end-121`` and positive
    shares outstanding at ``end-1``.
    """
    n = close.shape[0]
    raw = np.full((n, len(STYLE_NAMES)), np.nan)
    if end < LOOKBACK + 1:
        return raw, np.zeros(n, dtype=bool)
    last = close[:, end - 1]
    rev_base = close[:, end - 1 - REVERSAL_WINDOW]
    mom_base = close[:, end - 1 - LOOKBACK]
    sh = shares[:, end - 1]
    w = slice(end - SHORT_WINDOW, end)
    with np.errstate(invalid="ignore", divide="ignore"):
        turnover = volume[:, w] / shares[:, w]
        rets = close[:, w] / close[:, end - SHORT_WINDOW - 1:end - 1] - 1.0
    n_ret = np.sum(np.isfinite(rets), axis=1)
    eligible = (np.isfinite(last) & np.isfinite(rev_base) & np.isfinite(mom_base)
                & np.isfinite(sh) & (sh > 0) & (n_ret >= 2)
                & (np.sum(np.isfinite(turnover), axis=1) >= 1))
    e = eligible
    raw[e, 0] = np.log(last[e] * sh[e])
    raw[e, 1] = np.nanmean(turnover[e], axis=1)
    raw[e, 2] = np.nanstd(rets[e], axis=1, ddof=1)
    raw[e, 3] = close[e, end - 1 - REVERSAL_WINDOW] / mom_base[e] - 1.0
    raw[e, 4] = last[e] / rev_base[e] - 1.0
    return raw, eligible


def standardize(values, k=WINSOR_K):
    """Winsorize at mean +/- k std, then z-score (population std).

    Columns with zero spread come back as zeros.
    """
    x = np.array(values, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    out = np.zeros_like(x)
    for j in range(x.shape[1]):
        col = x[:, j]
        mu, sd = col.mean(), col.std()
        if sd == 0 or not np.isfinite(sd):
            continue
        col = np.clip(col, mu - k * sd, mu + k * sd)
        mu, sd = col.mean(), col.std()
        if sd == 0:
            continue
        out[:, j] = (col - mu) / sd
    return out[:, 0] if squeeze else out


@dataclass
class ExposureMatrix:
    """Standardized exposures for the eligible cross-section of one day."""

    day_index: int
    rows: np.ndarray        # indices into the price table's tickers
    styles: np.ndarray      # (m, 5) z-scores
    industry: np.ndarray    # (m,) integer codes into ``industries``
    industries: tuple

    def design(self, subset=None):
        """Full design ``[styles | industry dummies]`` for all or a subset of rows."""
        idx = slice(None) if subset is None else subset
        styles = self.styles[idx]
        ind = self.industry[idx]
        dummies = np.zeros((len(ind), len(self.industries)))
        dummies[np.arange(len(ind)), ind] = 1.0
        return np.hstack([styles, dummies])

    def vector(self, table_row):
        """Exposure vector of one stock, or None when it is not in the cross-section."""
        pos = np.searchsorted(self.rows, table_row)
        if pos >= len(self.rows) or self.rows[pos] != table_row:
            return None
        return self.design(np.array([pos]))[0]


def industry_codes(tickers, metadata):
    industries = tuple(sorted({metadata[t].industry for t in tickers if t in metadata}))
    lookup = {k: i for i, k in enumerate(industries)}
    codes = np.array([lookup.get(metadata[t].industry, -1) if t in metadata else -1 for t in tickers])
    return codes, industries


def exposure_matrix(close, volume, shares, codes, industries, day_index, min_stocks=MIN_CROSS_SECTION):
    raw, eligible = raw_style_matrix(close, volume, shares, day_index)
    eligible &= codes >= 0
    rows = np.flatnonzero(eligible)
    if len(rows) < min_stocks:
        raise FactorError(f"only {len(rows)} eligible stocks on day {day_index}; need {min_stocks}")
    return ExposureMatrix(day_index, rows, standardize(raw[rows]), codes[rows], industries)


def compute_style_exposures(prices, metadata, day):
    """Exposure rows for every eligible stock on ``day``."""
    j = prices.date_index(day)
    codes, industries = industry_codes(prices.tickers, metadata)
    em = exposure_matrix(prices.close, prices.volume, prices.shares, codes, industries, j)
    return [
        ExposureRow(prices.tickers[r], day, tuple(float(v) for v in em.styles[k]), industries[em.industry[k]])
        for k, r in enumerate(em.rows)
    ]


def _independent_columns(design):
    """Column indices forming a full-rank subset, via pivoted QR."""
    if design.shape[1] == 0:
        return []
    _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return sorted(piv[:rank].tolist())


def fit_premia(design, response, names, day=None):
    """Unweighted cross-sectional OLS of ``response`` on ``design``.

    Zero-variance style columns, empty industry dummies and any remaining
    linearly dependent columns are dropped; their premia are reported as 0.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = design.shape
    if y.shape != (n,):
        raise FactorError("response length must match the number of exposure rows")
    keep = []
    for j in range(p):
        col = design[:, j]
        if names[j].startswith("ind:"):
            if col.any():
                keep.append(j)
        elif np.ptp(col) > 0:
            keep.append(j)
    sub = _independent_columns(design[:, keep])
    keep = [keep[k] for k in sub]
    if n <= len(keep):
        raise FactorError(f"{n} observations for {len(keep)} factors; need more observations than factors")
    dropped = tuple(names[j] for j in range(p) if j not in keep)
    if dropped:
        logger.debug("day %s: dropped factor columns %s", day, dropped)
    values = np.zeros(p)
    if keep:
        coef, *_ = np.linalg.lstsq(design[:, keep], y, rcond=None)
        values[keep] = coef
    resid = y - design @ values
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / sst if sst > 0 else 1.0
    return DailyPremia(day, tuple(names), values, float(r2), n, dropped, resid)


def fit_daily_premia(exposures, responses):
    """Fit one day's premia from ExposureRow records and ``{ticker: AR^MR}``."""
    if not exposures:
        raise FactorError("no exposure rows")
    industries = tuple(sorted({r.industry for r in exposures}))
    names = factor_names(industries)
    lookup = {k: i for i, k in enumerate(industries)}
    design = np.zeros((len(exposures), len(names)))
    y = np.empty(len(exposures))
    for k, row in enumerate(exposures):
        if row.ticker not in responses:
            raise FactorError(f"no response for {row.ticker}")
        design[k, :len(STYLE_NAMES)] = row.styles
        design[k, len(STYLE_NAMES) + lookup[row.industry]] = 1.0
        y[k] = responses[row.ticker]
    return fit_premia(design, y, names, exposures[0].date)


def write_exposures(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("ticker", "date") + STYLE_NAMES + ("industry",))
        for r in rows:
            w.writerow([r.ticker, r.date.isoformat(), *map(fmt_float, r.styles), r.industry])


def read_exposures(path):
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            out.append(ExposureRow(row["ticker"], date.fromisoformat(row["date"]),
                                   tuple(float(row[s]) for s in STYLE_NAMES), row["industry"]))
    return out


def write_premia(premia, path):
    """One row per (date, factor): date,factor,premium,r2,n_obs,dropped."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("date", "factor", "premium", "r2", "n_obs", "dropped"))
        for p in premia:
            for name, v in zip(p.names, p.values):
                w.writerow([p.date.isoformat() if p.date else "", name, fmt_float(v), fmt_float(p.r2),
                            p.n_obs, int(name in p.dropped)])


def read_premia(path):
    grouped = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            grouped.setdefault(row["date"], []).append(row)
    out = []
    for d, rows in grouped.items():
        out.append(DailyPremia(
            date.fromisoformat(d) if d else None,
            tuple(r["factor"] for r in rows),
            np.array([float(r["premium"]) for r in rows]),
            float(rows[0]["r2"]), int(rows[0]["n_obs"]),
            tuple(r["factor"] for r in rows if r["dropped"] == "1"),
        ))
    return out

