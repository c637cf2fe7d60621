from dataclasses import replace
from datetime import date, datetime, time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrade.backtest import (BacktestConfig, BacktestError, PlannedTrade, PortfolioState, Signal, TypeWeights,
                              aggregate_daily_signals, compute_metrics, estimate_type_weights, read_signals,
                              run_backtest, run_sensitivity, signals_from_records, step_day, write_metrics,
                              write_nav, write_signals, write_trades, write_weights)
from evtrade.eventstudy import EventStudy
from evtrade.labeling import LabeledEvent, build_labeled_record
from evtrade.marketdata import DataError, PriceTable
from evtrade.synth import SynthSpec, synth_universe

from conftest import make_table

TS = datetime(2022, 1, 3, 10, 0)


def sig(k=0, ticker="T0", direction="long", strength="strong", etype="dividend", ts=TS):
    return Signal(f"E{k}", ticker, ts, direction, strength, etype, None)


def labeled(k, etype, car, day, window_end=None):
    d = "positive" if car > 0 else "negative" if car < 0 else "neutral"
    s = "strong" if abs(car) > 0.01 else "weak"
    return LabeledEvent(f"R{k}", "T0", datetime.combine(day, time(10)), etype, car, d, s, None, window_end or day)


@pytest.fixture(scope="module")
def universe():
    bundle, ledger = synth_universe(SynthSpec(n_stocks=60, n_days=250, n_events=150, seed=1,
                                              distinct_tickers=False, first_event_day=125))
    results, _ = EventStudy(bundle).run()
    events = {e.event_id: e for e in bundle.events}
    records = [build_labeled_record(events[r.event_id], r) for r in results]
    return bundle, ledger, records


class TestWeights:
    days = [date(2024, 1, k) for k in range(1, 31)]

    def test_proportional(self):
        recs = [labeled(0, "risk_warning", 0.05, self.days[0]), labeled(1, "violation", -0.03, self.days[1]),
                labeled(2, "dividend", 0.02, self.days[2])]
        w = estimate_type_weights(recs, 10, 250, self.days)
        assert w["risk_warning"] == pytest.approx(0.5) and w["violation"] == pytest.approx(0.3)
        assert w["dividend"] == pytest.approx(0.2) and w["financing"] == 0.0
        assert sum(w.weights.values()) == pytest.approx(1.0, abs=1e-12)

    def test_single_type(self):
        w = estimate_type_weights([labeled(0, "industry", 0.01, self.days[0])], 5, 250, self.days)
        assert w.weights == {"industry": 1.0}

    def test_no_history_uniform(self):
        w = estimate_type_weights([], 5, 250, self.days)
        assert len(w.weights) == 10 and all(v == pytest.approx(0.1) for v in w.weights.values())
        assert w.diagnostics

    def test_equal_mode(self):
        recs = [labeled(0, "risk_warning", 0.05, self.days[0]), labeled(1, "violation", -0.01, self.days[1])]
        w = estimate_type_weights(recs, 10, 250, self.days, mode="equal")
        assert w.weights == {"risk_warning": 0.5, "violation": 0.5}

    def test_unknown_car_excluded(self):
        # CAR only known after the window ends
        recs = [labeled(0, "risk_warning", 0.05, self.days[2], window_end=self.days[8])]
        assert estimate_type_weights(recs, 7, 250, self.days).diagnostics
        assert estimate_type_weights(recs, 8, 250, self.days).weights == {"risk_warning": 1.0}

    def test_rolling_window_drops_old(self):
        recs = [labeled(0, "risk_warning", 0.05, self.days[0]), labeled(1, "violation", 0.03, self.days[9])]
        assert estimate_type_weights(recs, 12, 5, self.days).weights == {"violation": 1.0}

    def test_all_zero_cars(self):
        recs = [labeled(0, "risk_warning", 0.0, self.days[0]), labeled(1, "violation", 0.0, self.days[1])]
        w = estimate_type_weights(recs, 5, 250, self.days)
        assert w.weights == {"risk_warning": 0.5, "violation": 0.5} and w.diagnostics


class TestAggregate:
    W = TypeWeights({"dividend": 0.5, "violation": 0.3, "industry": 0.2})

    def test_split(self):
        plan, _ = aggregate_daily_signals([sig(0), sig(1)], self.W, 100.0, PortfolioState(1000.0))
        assert [t.notional for t in plan] == [25.0, 25.0]

    def test_hold_and_weak_get_nothing(self):
        plan, _ = aggregate_daily_signals([sig(0, direction="hold"), sig(1, strength="weak")], self.W, 100.0,
                                          PortfolioState(1000.0))
        assert plan == []

    def test_unused_budget_stays(self):
        plan, _ = aggregate_daily_signals([sig(0)], self.W, 100.0, PortfolioState(1000.0))
        assert sum(t.notional for t in plan) == 50.0

    def test_cap_binding(self):
        pf = PortfolioState(0.0, nav=[(date(2022, 1, 3), 100.0)])
        pf.positions = [type("P", (), {"notional": 100.0})()]
        plan, notes = aggregate_daily_signals([sig(0)], self.W, 10.0, pf, k_max=1.0)
        assert plan == [] and "cap" in notes[0]

    def test_trim_keeps_highest_priority(self):
        signals = [sig(0, etype="industry"), sig(1, etype="violation"), sig(2, etype="dividend"),
                   sig(3, etype="dividend", ts=datetime(2022, 1, 3, 9, 45))]
        pf = PortfolioState(100.0, nav=[(date(2022, 1, 3), 100.0)])
        plan, _ = aggregate_daily_signals(signals, self.W, 100.0, pf, k_max=0.8)
        assert [t.signal.event_id for t in plan] == ["E3", "E2", "E1"]
        plan, _ = aggregate_daily_signals(signals, self.W, 100.0, pf, k_max=0.5)
        assert [t.signal.event_id for t in plan] == ["E3", "E2"]

    def test_bad_budget(self):
        with pytest.raises(ValueError):
            aggregate_daily_signals([], self.W, 0.0, PortfolioState(1.0))


class TestStepDay:
    def prices(self, open_=(10.0, 10.0, 10.0), close=(10.0, 10.5, 10.5)):
        return make_table([list(close)], open_=[list(open_)])

    def run_one(self, side, kappa=0.0, holding=2, prices=None):
        prices = prices or self.prices()
        cfg = BacktestConfig(holding=holding, cost=kappa, initial_capital=1000.0)
        pf = PortfolioState(1000.0)
        step_day(pf, 0, prices, [PlannedTrade(sig(0, direction=side), 100.0, 1.0)], cfg)
        for j in range(1, len(prices.dates)):
            step_day(pf, j, prices, [], cfg)
        return pf

    def test_long(self):
        pf = self.run_one("long")
        assert pf.trades[0]["pnl"] == pytest.approx(5.0) and pf.nav[-1][1] == pytest.approx(1005.0)

    def test_short(self):
        pf = self.run_one("short")
        assert pf.trades[0]["pnl"] == pytest.approx(-5.0) and pf.nav[-1][1] == pytest.approx(995.0)

    @pytest.mark.parametrize("side", ["long", "short"])
    def test_round_trip_costs(self, side):
        flat = self.prices(close=(10.0, 10.0, 10.0))
        assert self.run_one(side, 0.0, prices=flat).trades[0]["pnl"] == 0.0
        pnl = self.run_one(side, 0.002, prices=flat).trades[0]["pnl"]
        assert pnl == pytest.approx(-2 * 0.002 * 100.0, abs=1e-12)

    def test_holding_one_exits_same_day(self):
        pf = self.run_one("long", holding=1)
        t = pf.trades[0]
        assert t["entry_date"] == t["exit_date"] and t["pnl"] == pytest.approx(0.0)

    def test_idle_day(self):
        pf = PortfolioState(1000.0)
        step_day(pf, 0, self.prices(), [], BacktestConfig())
        assert pf.nav == [(self.prices().dates[0], 1000.0)]

    def test_missing_bar_skips_entry(self):
        prices = make_table([[np.nan, 10.0, 10.0]])
        pf = PortfolioState(1000.0)
        step_day(pf, 0, prices, [PlannedTrade(sig(0), 100.0, 1.0)], BacktestConfig())
        assert pf.positions == [] and "no bar" in pf.log[0]

    def test_exit_deferred_through_suspension(self):
        prices = make_table([[10.0, np.nan, np.nan, 11.0]])
        pf = PortfolioState(1000.0)
        cfg = BacktestConfig(holding=2, cost=0.0)
        step_day(pf, 0, prices, [PlannedTrade(sig(0), 100.0, 1.0)], cfg)
        for j in (1, 2, 3):
            step_day(pf, j, prices, [], cfg)
            if j < 3:
                assert pf.nav[-1][1] == pytest.approx(1000.0)
        assert pf.trades[0]["exit_date"] == prices.dates[3].isoformat()
        assert pf.trades[0]["pnl"] == pytest.approx(10.0)
        assert any("deferred" in m for m in pf.log)

    def test_no_leverage(self):
        pf = PortfolioState(50.0)
        step_day(pf, 0, self.prices(), [PlannedTrade(sig(0), 100.0, 1.0)], BacktestConfig(allow_leverage=False))
        assert pf.positions == [] and "negative cash" in pf.log[0]


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(holding=0), dict(holding=11), dict(cost=-0.1), dict(weight_mode="x"),
                                    dict(max_position_ratio=0.0), dict(budget=0.0), dict(budget_mode="y")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BacktestConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="bogus"):
            BacktestConfig.from_dict({"bogus": 1})


class TestRun:
    def test_empty_feed(self, universe):
        bundle, _, records = universe
        res = run_backtest([], bundle.prices, records)
        assert all(v == 1.0 for v in res.nav)
        assert res.metrics.total_return == 0.0 and res.metrics.mdd == 0.0
        assert res.metrics.sharpe_daily is None and res.metrics.diagnostics

    def test_oracle_feed(self, universe):
        bundle, _, records = universe
        res = run_backtest(signals_from_records(records), bundle.prices, records)
        assert res.metrics.da == 1.0 and res.metrics.eta == 1.0 and res.metrics.total_return > 0
        assert len(res.nav) == len(bundle.prices.dates)

    def test_deterministic(self, universe):
        bundle, _, records = universe
        a = run_backtest(signals_from_records(records), bundle.prices, records)
        b = run_backtest(signals_from_records(records), bundle.prices, records)
        np.testing.assert_array_equal(a.nav, b.nav)

    def test_nav_identity_and_cap(self, universe):
        bundle, _, records = universe
        cfg = BacktestConfig(max_position_ratio=0.15, holding=4)
        res = run_backtest(signals_from_records(records), bundle.prices, records, cfg)
        for (d, nav), (_, cash, marked) in zip(res.portfolio.nav, res.portfolio.marks):
            assert abs(nav - (cash + marked)) <= 1e-9 * abs(nav)
        navs = dict(res.portfolio.nav)
        dates = bundle.prices.dates
        for j, plan in res.plans.items():
            open_after = sum(t.notional for t in plan)
            held = sum(float(t["notional"]) for t in res.portfolio.trades
                       if t["entry_date"] <= dates[j].isoformat() and (t["exit_date"] or "9") > dates[j].isoformat())
            assert open_after + held <= 0.15 * navs[dates[j]] + 1e-12

    def test_monotone_fees(self, universe):
        bundle, _, records = universe
        signals = signals_from_records(records)
        rets = [run_backtest(signals, bundle.prices, records, BacktestConfig(cost=k)).metrics.total_return
                for k in (0.0, 0.001, 0.003, 0.01, 0.05)]
        assert all(a >= b for a, b in zip(rets, rets[1:]))
        assert rets[-1] <= 0

    def test_weak_or_hold_never_trade(self, universe):
        bundle, _, records = universe
        signals = [replace(s, strength="weak") for s in signals_from_records(records)]
        assert run_backtest(signals, bundle.prices, records).portfolio.trades == []

    def test_signal_outside_calendar(self, universe):
        bundle, _, records = universe
        s = sig(0, ticker=bundle.prices.tickers[0], ts=datetime(1999, 1, 1, 10))
        with pytest.raises(BacktestError, match="outside calendar"):
            run_backtest([s], bundle.prices, records)

    def test_metrics_pairs(self, universe):
        bundle, _, records = universe
        signals = [replace(s, direction="short" if s.direction == "long" else "long", car_hat=0.0)
                   for s in signals_from_records(records) if s.direction != "hold"]
        m = run_backtest(signals, bundle.prices, records).metrics
        assert m.da == 0.0 and m.mae == pytest.approx(np.mean([abs(r.car) for r in records]))
        assert m.mae <= m.rmse


def _mutate(prices, i, j, factor):
    arrays = {k: getattr(prices, k).copy() for k in ("open", "close")}
    arrays["open"][i, j:] *= factor
    arrays["close"][i, j:] *= factor
    return PriceTable(prices.dates, prices.tickers, volume=prices.volume, shares=prices.shares,
                      benchmarks=prices.benchmarks, **arrays)


def _plan_key(plans, upto):
    return {j: [(t.signal.event_id, t.notional) for t in p] for j, p in plans.items() if j <= upto}


def test_no_look_ahead_price_mutation(universe):
    bundle, _, records = universe
    signals = signals_from_records(records)
    cfg = BacktestConfig(max_position_ratio=0.2)
    base = run_backtest(signals, bundle.prices, records, cfg)
    rng = np.random.default_rng(0)
    T = len(bundle.prices.dates)
    for _ in range(100):
        t = int(rng.integers(125, T - 1))
        i = int(rng.integers(len(bundle.prices.tickers)))
        mutated = _mutate(bundle.prices, i, t + 1, float(rng.uniform(0.5, 1.5)))
        res = run_backtest(signals, mutated, records, cfg)
        assert _plan_key(res.plans, t) == _plan_key(base.plans, t)
        np.testing.assert_array_equal(res.nav[:t + 1], base.nav[:t + 1])


def test_no_look_ahead_car_mutation(universe):
    bundle, _, records = universe
    signals = signals_from_records(records)
    base = run_backtest(signals, bundle.prices, records)
    dates = bundle.prices.dates
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = int(rng.integers(125, len(dates) - 1))
        changed = [replace(r, car=r.car * 5.0) if r.window_end > dates[t] else r for r in records]
        res = run_backtest(signals, bundle.prices, changed)
        assert _plan_key(res.plans, t) == _plan_key(base.plans, t)


class TestSensitivity:
    def test_rows(self, universe):
        bundle, _, records = universe
        rows = run_sensitivity(signals_from_records(records), bundle.prices, records, BacktestConfig(),
                               "holding", range(1, 11))
        assert [r["value"] for r in rows] == list(range(1, 11))
        assert {"parameter", "total_return", "sharpe", "mdd"} <= set(rows[0])


class TestFiles:
    def test_signals_round_trip(self, universe, tmp_path):
        _, _, records = universe
        signals = signals_from_records(records)
        write_signals(signals, tmp_path / "s.csv")
        assert read_signals(tmp_path / "s.csv") == signals

    def test_bad_signal_line(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("event_id,ticker,timestamp,direction,strength,event_type,car_hat\n"
                     "E1,T,2024-01-01T10:00:00,up,strong,dividend,\n")
        with pytest.raises(DataError) as ei:
            read_signals(p)
        assert ei.value.line == 2

    def test_outputs(self, universe, tmp_path):
        bundle, _, records = universe
        res = run_backtest(signals_from_records(records), bundle.prices, records)
        write_nav(res.portfolio, tmp_path / "nav.csv")
        write_trades(res.portfolio, tmp_path / "trades.csv")
        write_metrics(res.metrics, tmp_path / "m.json")
        write_weights(res.weights, tmp_path / "w.csv")
        nav_lines = (tmp_path / "nav.csv").read_text().splitlines()
        assert nav_lines[0] == "date,nav" and len(nav_lines) == len(bundle.prices.dates) + 1
        assert len((tmp_path / "trades.csv").read_text().splitlines()) == len(res.portfolio.trades) + 1
        assert len((tmp_path / "w.csv").read_text().splitlines()) == 10 * len(res.weights) + 1


def test_compute_metrics_undefined_sharpe():
    m = compute_metrics([], [1.0, 1.0, 1.0])
    assert m.sharpe_daily is None and m.sharpe_annual is None
    assert any("sharpe" in d for d in m.diagnostics)
