"""
Event-driven long-short backtester.

Daily protocol for a signal day ``t``:

1. Signals of news arriving in ``[open(t), open(t+1))`` are collected.
2. After the close of ``t`` the daily budget is split across event types by
   type weight and evenly within a type; only strong Long/Short signals trade.
   Trades are trimmed so open notional stays within ``k_max * NAV``.
3. Planned trades open at the open of ``t+1`` and close at the close of
   ``t+H`` (the entry day plus ``H-1`` trading days).

Transaction costs are ``kappa`` per side on traded notional. Budget that no
trade uses stays in cash.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime

import numpy as np

from . import metrics as M
from .marketdata import DataError, fmt_float
from .taxonomy import EVENT_TYPES, LabelError, parse_event_type, parse_strength

logger = logging.getLogger(__name__)

SIDES = ("long", "short", "hold")
SIGNAL_COLUMNS = ("event_id", "ticker", "timestamp", "direction", "strength", "event_type", "car_hat")
TRADE_COLUMNS = ("event_id", "ticker", "side", "event_type", "notional", "entry_date", "entry_price",
                 "exit_date", "exit_price", "entry_cost", "exit_cost", "pnl", "status")
SIDE_TO_DIRECTION = {"long": "positive", "short": "negative", "hold": "neutral"}


class BacktestError(RuntimeError):
    pass


@dataclass(frozen=True)
class Signal:
    event_id: str
    ticker: str
    timestamp: datetime
    direction: str  # long / short / hold
    strength: str
    event_type: str
    car_hat: float | None = None

    def __post_init__(self):
        if self.direction not in SIDES:
            raise ValueError(f"signal direction must be one of {SIDES}, got {self.direction!r}")

    @property
    def actionable(self):
        return self.direction != "hold" and self.strength == "strong"


@dataclass
class TypeWeights:
    weights: dict
    as_of: object = None
    window: tuple = ()
    mode: str = "type"
    diagnostics: tuple = ()

    def __getitem__(self, k):
        return self.weights.get(k, 0.0)


@dataclass
class PlannedTrade:
    signal: Signal
    notional: float
    weight: float

    @property
    def side(self):
        return self.signal.direction


@dataclass
class Position:
    event_id: str
    ticker: str
    side: str
    event_type: str
    notional: float
    entry_index: int
    entry_price: float
    exit_index: int
    shares: float
    entry_cost: float
    exit_price: float | None = None
    exit_actual: int | None = None

    def value(self, price):
        """Signed mark-to-market value."""
        v = self.shares * price
        return v if self.side == "long" else -v


@dataclass
class PortfolioState:
    cash: float
    positions: list = field(default_factory=list)
    nav: list = field(default_factory=list)       # (date, nav)
    trades: list = field(default_factory=list)    # dicts keyed by TRADE_COLUMNS
    marks: list = field(default_factory=list)     # (date, cash, marked positions)
    log: list = field(default_factory=list)

    def open_notional(self):
        return sum(p.notional for p in self.positions)

    @property
    def last_nav(self):
        return self.nav[-1][1] if self.nav else self.cash


@dataclass(frozen=True)
class BacktestConfig:
    holding: int = 2
    max_position_ratio: float | None = None
    cost: float = 0.0015
    weight_mode: str = "type"
    budget_mode: str = "nav_fraction"
    budget: float = 0.1
    initial_capital: float = 1.0
    weight_window: int = 250
    weight_cadence: int = 20
    allow_leverage: bool = True
    annualization: int = M.TRADING_DAYS

    def __post_init__(self):
        if not 1 <= self.holding <= 10:
            raise ValueError("holding must lie in 1..10")
        if self.max_position_ratio is not None and not self.max_position_ratio > 0:
            raise ValueError("max_position_ratio must be > 0 (or None for no cap)")
        if self.cost < 0:
            raise ValueError("cost must be >= 0")
        if self.weight_mode not in ("type", "equal"):
            raise ValueError("weight_mode must be 'type' or 'equal'")
        if self.budget_mode not in ("nav_fraction", "fixed"):
            raise ValueError("budget_mode must be 'nav_fraction' or 'fixed'")
        if not self.budget > 0:
            raise ValueError("budget must be > 0")
        if not self.initial_capital > 0:
            raise ValueError("initial_capital must be > 0")
        if self.weight_window < 1 or self.weight_cadence < 1:
            raise ValueError("weight_window and weight_cadence must be >= 1")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown backtest keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsReport:
    mae: float | None
    rmse: float | None
    da: float | None
    eta: float | None
    sharpe_daily: float | None
    sharpe_annual: float | None
    mdd: float
    total_return: float
    n_predictions: int = 0
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _availability(record, calendar_days):
    """Calendar index after whose close the record's CAR is known."""
    day = record.window_end or record.t0.date()
    return bisect.bisect_right(calendar_days, day) - 1


def estimate_type_weights(records, as_of_index, window_length, calendar_days, mode="type"):
    """Weights proportional to mean |CAR| per type over the trailing window.

    Only records whose CAR is known by the close of ``as_of_index`` and not
    older than ``window_length`` trading days are used.
    """
    lo = as_of_index - window_length + 1
    cars = {}
    for r in records:
        k = _availability(r, calendar_days)
        if lo <= k <= as_of_index:
            cars.setdefault(r.event_type, []).append(abs(r.car))
    window = (calendar_days[max(lo, 0)], calendar_days[as_of_index]) if calendar_days else ()
    as_of = calendar_days[as_of_index] if calendar_days else None
    if not cars:
        w = 1.0 / len(EVENT_TYPES)
        return TypeWeights({k: w for k in EVENT_TYPES}, as_of, window, mode,
                           ("no historical records in window; uniform weights",))
    observed = sorted(cars)
    if mode == "equal":
        raw = {k: 1.0 for k in observed}
    else:
        raw = {k: float(np.mean(cars[k])) for k in observed}
    total = sum(raw.values())
    notes = ()
    if total == 0:
        raw = {k: 1.0 for k in observed}
        total = float(len(observed))
        notes = ("all historical CARs are zero; uniform weights over observed types",)
    return TypeWeights({k: v / total for k, v in raw.items()}, as_of, window, mode, notes)


def _priority(trade):
    return (-trade.weight, trade.signal.timestamp, trade.signal.event_id)


def aggregate_daily_signals(signals, weights, budget, portfolio, k_max=None, nav=None):
    """Plan the next open's trades from one signal day.

    Returns ``(trades, notes)``; trades are in priority order.
    """
    if not budget > 0:
        raise ValueError("budget must be > 0")
    notes = []
    by_type = {}
    for s in signals:
        if s.actionable:
            by_type.setdefault(s.event_type, []).append(s)
    plan = []
    for etype, group in by_type.items():
        w = weights[etype]
        if w <= 0:
            continue
        each = w * budget / len(group)
        plan.extend(PlannedTrade(s, each, w) for s in group)
    plan.sort(key=_priority)
    if k_max is not None and plan:
        nav = portfolio.last_nav if nav is None else nav
        room = k_max * nav - portfolio.open_notional()
        dropped = 0
        while plan and sum(t.notional for t in plan) > room:
            plan.pop()
            dropped += 1
        if dropped:
            notes.append(f"position cap {k_max}x NAV binding: dropped {dropped} trade(s)")
    return plan, notes


def step_day(portfolio, day_index, prices, trades, config):
    """Open planned trades at today's open, close due positions at today's close, mark NAV."""
    day = prices.dates[day_index]
    kappa = config.cost
    for t in trades:
        s = t.signal
        if not prices.has_ticker(s.ticker):
            portfolio.log.append(f"{day}: {s.event_id} skipped, unknown ticker {s.ticker}")
            continue
        i = prices.ticker_index(s.ticker)
        px = prices.open[i, day_index]
        if not np.isfinite(px):
            portfolio.log.append(f"{day}: {s.event_id} skipped, no bar for {s.ticker}")
            continue
        cost = kappa * t.notional
        new_cash = portfolio.cash - t.notional - cost if s.direction == "long" else portfolio.cash + t.notional - cost
        if not config.allow_leverage and new_cash < 0:
            portfolio.log.append(f"{day}: {s.event_id} skipped, would leave negative cash")
            continue
        portfolio.cash = new_cash
        portfolio.positions.append(Position(
            s.event_id, s.ticker, s.direction, s.event_type, t.notional, day_index, float(px),
            day_index + config.holding - 1, t.notional / px, cost,
        ))

    still_open = []
    for p in portfolio.positions:
        if p.exit_index > day_index:
            still_open.append(p)
            continue
        i = prices.ticker_index(p.ticker)
        px = prices.close[i, day_index]
        if not np.isfinite(px):
            portfolio.log.append(f"{day}: exit of {p.event_id} deferred, no bar for {p.ticker}")
            still_open.append(p)
            continue
        value = p.shares * px
        exit_cost = kappa * value
        if p.side == "long":
            portfolio.cash += value - exit_cost
            pnl = value - p.notional - p.entry_cost - exit_cost
        else:
            portfolio.cash -= value + exit_cost
            pnl = p.notional - value - p.entry_cost - exit_cost
        p.exit_price, p.exit_actual = float(px), day_index
        portfolio.trades.append(_trade_row(p, prices, exit_cost, pnl, "closed"))
    portfolio.positions = still_open

    marked = sum(p.value(_last_close(prices, p.ticker, day_index)) for p in portfolio.positions)
    nav = portfolio.cash + marked
    portfolio.nav.append((day, nav))
    portfolio.marks.append((day, portfolio.cash, marked))
    return portfolio


def _last_close(prices, ticker, day_index):
    i = prices.ticker_index(ticker)
    row = prices.close[i, :day_index + 1]
    ok = np.flatnonzero(np.isfinite(row))
    return float(row[ok[-1]])


def _trade_row(p, prices, exit_cost, pnl, status):
    return {
        "event_id": p.event_id, "ticker": p.ticker, "side": p.side, "event_type": p.event_type,
        "notional": p.notional, "entry_date": prices.dates[p.entry_index].isoformat(),
        "entry_price": p.entry_price,
        "exit_date": prices.dates[p.exit_actual].isoformat() if p.exit_actual is not None else "",
        "exit_price": p.exit_price, "entry_cost": p.entry_cost, "exit_cost": exit_cost,
        "pnl": pnl, "status": status,
    }


@dataclass
class BacktestResult:
    portfolio: PortfolioState
    metrics: MetricsReport
    weights: list      # TypeWeights per re-estimation
    plans: dict        # signal day index -> list of PlannedTrade
    config: BacktestConfig

    @property
    def nav(self):
        return np.array([v for _, v in self.portfolio.nav])


def run_backtest(signals, prices, records, config=None):
    """Run the daily loop over the price calendar.

    ``records`` are labeled events used both for type-weight estimation and as
    the truth for the prediction metrics (matched by event_id).
    """
    config = config or BacktestConfig()
    days = list(prices.dates)
    calendar = prices.calendar
    by_day = {}
    for s in signals:
        try:
            j = calendar.signal_index(s.timestamp)
        except DataError as err:
            raise BacktestError(f"signal {s.event_id}: {err}") from None
        by_day.setdefault(j, []).append(s)

    portfolio = PortfolioState(cash=config.initial_capital)
    weight_history, plans = [], {}
    weights = None
    pending = []
    for j in range(len(days)):
        try:
            step_day(portfolio, j, prices, pending, config)
        except Exception as err:
            raise BacktestError(f"{days[j]}: {err}") from err
        pending = []
        if j == len(days) - 1:
            break
        if weights is None or j % config.weight_cadence == 0:
            weights = estimate_type_weights(records, j, config.weight_window, days, config.weight_mode)
            weight_history.append(weights)
        todays = by_day.get(j, [])
        if not todays:
            continue
        nav = portfolio.last_nav
        budget = config.budget * nav if config.budget_mode == "nav_fraction" else config.budget
        if budget <= 0:
            portfolio.log.append(f"{days[j]}: non-positive budget, no trades planned")
            continue
        pending, notes = aggregate_daily_signals(todays, weights, budget, portfolio,
                                                 config.max_position_ratio, nav)
        portfolio.log.extend(f"{days[j]}: {n}" for n in notes)
        plans[j] = pending

    for p in portfolio.positions:
        portfolio.trades.append(_trade_row(p, prices, 0.0, float("nan"), "open"))

    report = compute_metrics(_prediction_pairs(signals, records), [v for _, v in portfolio.nav], config)
    return BacktestResult(portfolio, report, weight_history, plans, config)


def _prediction_pairs(signals, records):
    truth = {r.event_id: r for r in records}
    pairs = []
    for s in signals:
        r = truth.get(s.event_id)
        if r is None:
            continue
        pairs.append((s.car_hat, r.car, SIDE_TO_DIRECTION[s.direction], r.direction, s.event_type, r.event_type))
    return pairs


def compute_metrics(pairs, nav, config=None):
    """Metrics from ``(car_hat, car, d_hat, d, e_hat, e)`` tuples and a NAV series."""
    annual = config.annualization if config else M.TRADING_DAYS
    notes = []
    with_car = [(p[0], p[1]) for p in pairs if p[0] is not None]
    mae = rmse = da = eta = None
    if with_car:
        ph, pt = zip(*with_car)
        mae, rmse = M.mae(ph, pt), M.rmse(ph, pt)
    elif pairs:
        notes.append("no predicted CAR values; MAE/RMSE undefined")
    if pairs:
        da = M.direction_accuracy([p[2] for p in pairs], [p[3] for p in pairs])
        eta = M.event_type_accuracy([p[4] for p in pairs], [p[5] for p in pairs])
    sr_d = sr_a = None
    if len(nav) >= 2:
        rets = M.nav_returns(nav)
        try:
            sr_d = M.sharpe_ratio(rets)
            sr_a = M.sharpe_ratio(rets, annual)
        except M.UndefinedMetricError as err:
            notes.append(f"sharpe undefined: {err}")
    else:
        notes.append("NAV series shorter than 2; Sharpe undefined")
    return MetricsReport(mae, rmse, da, eta, sr_d, sr_a, M.max_drawdown(nav), M.total_return(nav),
                         len(pairs), notes)


def run_sensitivity(signals, prices, records, base, parameter, values):
    """Re-run the backtest for each value of one config field."""
    rows = []
    for v in values:
        res = run_backtest(signals, prices, records, replace(base, **{parameter: v}))
        m = res.metrics
        rows.append({"parameter": parameter, "value": v, "total_return": m.total_return,
                     "sharpe": m.sharpe_annual, "mdd": m.mdd})
    return rows


def signals_from_records(records):
    """Signals acting on realized labels: a perfect-foresight feed."""
    side = {"positive": "long", "negative": "short", "neutral": "hold"}
    return [Signal(r.event_id, r.ticker, r.t0, side[r.direction], r.strength, r.event_type, r.car)
            for r in records]


def read_signals(path):
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != SIGNAL_COLUMNS:
            raise DataError(f"header must be {','.join(SIGNAL_COLUMNS)}", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d = dict(zip(SIGNAL_COLUMNS, row, strict=True))
                out.append(Signal(d["event_id"], d["ticker"], datetime.fromisoformat(d["timestamp"]),
                                  d["direction"], parse_strength(d["strength"]), parse_event_type(d["event_type"]),
                                  float(d["car_hat"]) if d["car_hat"] else None))
            except (ValueError, LabelError) as e:
                raise DataError(str(e), path=path, line=lineno) from None
    return out


def write_signals(signals, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SIGNAL_COLUMNS)
        for s in signals:
            w.writerow([s.event_id, s.ticker, s.timestamp.isoformat(), s.direction, s.strength, s.event_type,
                        fmt_float(s.car_hat)])


def write_nav(portfolio, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("date", "nav"))
        for d, v in portfolio.nav:
            w.writerow([d.isoformat(), fmt_float(v)])


def write_trades(portfolio, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRADE_COLUMNS)
        for t in portfolio.trades:
            w.writerow([fmt_float(t[c]) if isinstance(t[c], float) else t[c] for c in TRADE_COLUMNS])


def write_metrics(report, path):
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def write_weights(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("as_of", "window_start", "window_end", "event_type", "weight"))
        for tw in history:
            for k in EVENT_TYPES:
                w.writerow([tw.as_of.isoformat(), tw.window[0].isoformat(), tw.window[1].isoformat(), k,
                            fmt_float(tw[k])])
