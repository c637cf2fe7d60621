"""
Prediction and trading metrics.

    MAE   mean |c_hat - c|
    RMSE  sqrt(mean (c_hat - c)^2)
    DA    share of events whose predicted direction label equals the realized one
    ETA   share of events whose predicted type equals the true type
    SR    mean(daily NAV return) / std (sample, n-1); optionally * sqrt(252)
    MDD   max over t of 1 - value / running peak
"""

from __future__ import annotations

import numpy as np

TRADING_DAYS = 252


class UndefinedMetricError(ArithmeticError):
    """A metric has no finite value for the given input (e.g. zero-variance returns)."""


def _paired(pred, true):
    p = np.asarray(pred, dtype=float)
    t = np.asarray(true, dtype=float)
    if p.shape != t.shape:
        raise ValueError("prediction and truth lengths differ")
    if p.size == 0:
        raise UndefinedMetricError("no paired observations")
    return p, t


def mae(pred, true):
    p, t = _paired(pred, true)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, true):
    p, t = _paired(pred, true)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _accuracy(pred, true):
    if len(pred) != len(true):
        raise ValueError("prediction and truth lengths differ")
    if not pred:
        raise UndefinedMetricError("no paired observations")
    return sum(a == b for a, b in zip(pred, true)) / len(pred)


def direction_accuracy(pred, true):
    return _accuracy(list(pred), list(true))


def event_type_accuracy(pred, true):
    return _accuracy(list(pred), list(true))


def nav_returns(nav):
    v = np.asarray(nav, dtype=float)
    return v[1:] / v[:-1] - 1.0


def sharpe_ratio(returns, annualization=None):
    """Mean over sample std of periodic returns.

    Raises UndefinedMetricError when fewer than two returns are given or the
    returns have zero variance.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise UndefinedMetricError("Sharpe ratio needs at least two returns")
    sd = r.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        raise UndefinedMetricError("returns have zero variance; Sharpe ratio undefined")
    sr = r.mean() / sd
    if annualization:
        sr *= np.sqrt(annualization)
    return float(sr)


def max_drawdown(nav):
    v = np.asarray(nav, dtype=float)
    if v.size == 0:
        return 0.0
    peak = np.maximum.accumulate(v)
    # 1 - v/peak equals (peak - v)/peak; this form keeps round fixtures exact
    return float(np.max(1.0 - v / peak))


def total_return(nav):
    v = np.asarray(nav, dtype=float)
    if v.size < 2:
        return 0.0
    return float(v[-1] / v[0] - 1.0)
