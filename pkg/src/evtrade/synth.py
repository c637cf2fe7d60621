"""Synthetic universes with planted ground truth.

Daily stock returns are built as

    r[i,t] = alpha_i + beta_i * r_m(i)[t] + industry_premium[k(i),t]
             + styles[i,t] . style_premia[t] + planted event effect + noise

where ``styles[i,t]`` are the same standardized exposures that
:func:`evtrade.riskfactors.exposure_matrix` computes from the generated history,
so a correct pipeline can recover every planted quantity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .marketdata import DataBundle, PriceTable, RawEvent, StockInfo
from .riskfactors import STYLE_NAMES, exposure_matrix, industry_codes
from .taxonomy import EVENT_TYPES

# Per-type mean |effect|. Ordering loosely follows the historical magnitudes
# reported for the A-share taxonomy; the numbers themselves are synthetic.
DEFAULT_TYPE_EFFECTS = {
    "risk_warning": 0.055,
    "violation": 0.035,
    "financial_status": 0.03,
    "equity_change": 0.028,
    "asset_change": 0.025,
    "financing": 0.024,
    "dividend": 0.02,
    "industry": 0.02,
    "rating_adjustment": 0.015,
    "personal_behavior": 0.012,
}


class SpecError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_stocks: int = 200
    n_days: int = 400
    start: str = "2021-01-04"
    seed: int = 0
    n_industries: int = 10
    segments: tuple = ("IDX_LARGE", "IDX_MID", "IDX_SMALL")
    alpha_mean: float = 0.0002
    alpha_std: float = 0.0003
    beta_mean: float = 1.0
    beta_std: float = 0.2
    market_mean: float = 0.0003
    market_vol: float = 0.01
    industry_premia_vol: float = 0.003
    style_premia_vol: float = 0.0005
    noise: float = 0.01
    n_events: int = 150
    type_effects: dict = field(default_factory=lambda: dict(DEFAULT_TYPE_EFFECTS))
    # +1 / -1 fixes the sign of a type's effect; 0 draws it per event
    type_signs: dict = field(default_factory=dict)
    effect_jitter: float = 0.25
    # (offset from signal day, share of the total effect)
    effect_profile: tuple = ((1, 0.5), (2, 0.5))
    first_event_day: int = 130
    tail_days: int = 12
    overnight_share: float = 0.0
    distinct_tickers: bool = True

    def validate(self):
        for name in ("n_stocks", "n_days", "n_industries", "n_events"):
            if getattr(self, name) <= 0 and not (name == "n_events" and self.n_events == 0):
                raise SpecError(f"{name} must be positive")
        for name in ("alpha_std", "beta_std", "market_vol", "industry_premia_vol", "style_premia_vol",
                     "noise", "effect_jitter"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be >= 0")
        if not self.segments:
            raise SpecError("at least one benchmark segment is required")
        unknown = set(self.type_effects) - set(EVENT_TYPES)
        if unknown:
            raise SpecError(f"unknown event types in type_effects: {sorted(unknown)}")
        if not self.type_effects and self.n_events:
            raise SpecError("type_effects is empty")
        if not 0.0 <= self.overnight_share <= 1.0:
            raise SpecError("overnight_share must lie in [0, 1]")
        last = self.n_days - 1 - self.tail_days
        if self.n_events and last < self.first_event_day:
            raise SpecError("n_days too small for first_event_day and tail_days")
        if not self.effect_profile:
            raise SpecError("effect_profile is empty")
        return self

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown synth keys: {sorted(unknown)}")
        d = dict(d)
        if "segments" in d:
            d["segments"] = tuple(d["segments"])
        if "effect_profile" in d:
            d["effect_profile"] = tuple(tuple(p) for p in d["effect_profile"])
        return cls(**d).validate()

    def to_dict(self):
        d = asdict(self)
        d["segments"] = list(self.segments)
        d["effect_profile"] = [list(p) for p in self.effect_profile]
        return d


@dataclass
class SynthLedger:
    """Every planted quantity, for oracle checks."""

    spec: dict
    stocks: list
    events: list
    market_returns: dict
    industries: list
    industry_premia: list
    style_premia: list

    def event(self, event_id):
        for e in self.events:
            if e["event_id"] == event_id:
                return e
        raise KeyError(event_id)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def write(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def synth_universe(spec):
    """Generate ``(DataBundle, ledger)``; the bundle carries prices, events and metadata."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_stocks, spec.n_days
    days = [d.date() for d in pd.bdate_range(date.fromisoformat(spec.start), periods=T)]
    tickers = [f"S{i:04d}" for i in range(n)]

    seg_of = rng.integers(0, len(spec.segments), size=n)
    industries = [f"IND{k:02d}" for k in range(spec.n_industries)]
    ind_of = rng.permutation(np.arange(n) % spec.n_industries)
    alpha = spec.alpha_mean + spec.alpha_std * rng.standard_normal(n)
    beta = spec.beta_mean + spec.beta_std * rng.standard_normal(n)
    shares = np.exp(rng.normal(np.log(1e8), 0.8, size=n))
    start_price = rng.uniform(5.0, 50.0, size=n)

    mkt = spec.market_mean + spec.market_vol * rng.standard_normal((len(spec.segments), T))
    mkt[:, 0] = 0.0
    ind_prem = spec.industry_premia_vol * rng.standard_normal((spec.n_industries, T))
    ind_prem[:, 0] = 0.0
    sty_prem = spec.style_premia_vol * rng.standard_normal((T, len(STYLE_NAMES)))
    sty_prem[0] = 0.0
    turnover = np.exp(rng.normal(np.log(0.01), 0.5, size=(n, T)))
    noise = spec.noise * rng.standard_normal((n, T))

    effects = np.zeros((n, T))
    events, ledger_events = [], []
    types = sorted(spec.type_effects)
    if spec.n_events:
        sig_days = np.sort(rng.integers(spec.first_event_day, T - spec.tail_days, size=spec.n_events))
        if spec.distinct_tickers:
            order = np.concatenate([rng.permutation(n) for _ in range(spec.n_events // n + 1)])
            who = order[:spec.n_events]
        else:
            who = rng.integers(0, n, size=spec.n_events)
        kinds = rng.integers(0, len(types), size=spec.n_events)
        jitter = rng.uniform(-1.0, 1.0, size=spec.n_events)
        coin = rng.integers(0, 2, size=spec.n_events)
        minutes = rng.integers(0, 24 * 60, size=spec.n_events)
        for k in range(spec.n_events):
            etype = types[kinds[k]]
            sign = spec.type_signs.get(etype, 0) or (1 if coin[k] else -1)
            total = sign * spec.type_effects[etype] * (1.0 + spec.effect_jitter * jitter[k])
            i, s = int(who[k]), int(sig_days[k])
            for offset, share in spec.effect_profile:
                if 0 < s + offset < T:
                    effects[i, s + offset] += share * total
            eid = f"E{k:06d}"
            ts = datetime.combine(days[s], time(9, 30)) + timedelta(minutes=int(minutes[k]))
            events.append(RawEvent(eid, tickers[i], ts, etype, f"synthetic:{eid}"))
            ledger_events.append({
                "event_id": eid, "ticker": tickers[i], "signal_day": days[s].isoformat(),
                "event_type": etype, "effect": float(total),
                "profile": [[int(o), float(sh)] for o, sh in spec.effect_profile],
            })

    meta = {t: StockInfo(industries[ind_of[i]], spec.segments[seg_of[i]]) for i, t in enumerate(tickers)}
    codes, ind_names = industry_codes(tickers, meta)

    close = np.full((n, T), np.nan)
    opn = np.full((n, T), np.nan)
    vol = shares[:, None] * turnover
    shr = np.repeat(shares[:, None], T, axis=1)
    close[:, 0] = start_price
    opn[:, 0] = start_price
    # industry codes follow sorted names; map planted premia rows accordingly
    prem_rows = np.array([industries.index(name) for name in ind_names])
    for t in range(1, T):
        r = alpha + beta * mkt[seg_of, t] + ind_prem[prem_rows[codes], t] + effects[:, t] + noise[:, t]
        if spec.style_premia_vol > 0 and t >= 121:
            em = exposure_matrix(close, vol, shr, codes, ind_names, t)
            r[em.rows] += em.styles @ sty_prem[t]
        close[:, t] = close[:, t - 1] * (1.0 + r)
        opn[:, t] = close[:, t - 1] * (1.0 + spec.overnight_share * r)
    if np.any(close <= 0):
        raise SpecError("generated a non-positive price; reduce volatilities or effects")

    idx_close = 1000.0 * np.cumprod(1.0 + mkt, axis=1)
    bench = {seg: idx_close[k] for k, seg in enumerate(spec.segments)}
    table = PriceTable(days, tickers, opn, close, vol, shr, bench)
    ledger = SynthLedger(
        spec=spec.to_dict(),
        stocks=[{"ticker": t, "alpha": float(alpha[i]), "beta": float(beta[i]),
                 "industry": meta[t].industry, "segment": meta[t].cap_segment} for i, t in enumerate(tickers)],
        events=ledger_events,
        market_returns={seg: mkt[k].tolist() for k, seg in enumerate(spec.segments)},
        industries=industries,
        industry_premia=ind_prem.tolist(),
        style_premia=sty_prem.tolist(),
    )
    return DataBundle(table, events, meta), ledger
