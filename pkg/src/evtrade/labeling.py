"""Direction/strength labels from CAR, dataset records and per-type statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, datetime

import numpy as np

from .taxonomy import EVENT_TYPES, LabelError, parse_direction, parse_event_type, parse_strength, sign_direction

DATASET_FIELDS = ("news_ref", "t0", "ticker", "event_type", "direction", "strength", "car")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class Label:
    direction: str
    strength: str


@dataclass(frozen=True)
class LabeledEvent:
    event_id: str
    ticker: str
    t0: datetime
    event_type: str
    car: float
    direction: str
    strength: str
    news_ref: str | None = None
    # last event-window day; the CAR is only known after this close
    window_end: date | None = None

    def check(self, tau, neutral_band=0.0):
        if derive_label(self.car, tau, neutral_band) != Label(self.direction, self.strength):
            raise LabelError(f"{self.event_id}: labels inconsistent with car={self.car}")
        return self


def derive_label(car, tau=0.01, neutral_band=0.0):
    """Direction by sign outside the neutral band; strong iff ``|car| > tau``."""
    if not math.isfinite(car):
        raise LabelError(f"car must be finite, got {car}")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if neutral_band < 0:
        raise ValueError("neutral_band must be >= 0")
    return Label(sign_direction(car, neutral_band), "strong" if abs(car) > tau else "weak")


def build_labeled_record(event, car_result, tau=0.01, neutral_band=0.0, event_type=None):
    """Join a raw event with its CAR; ``event_type`` overrides the event's own annotation."""
    if car_result.event_id != event.event_id:
        raise ValueError(f"CAR result {car_result.event_id} does not belong to event {event.event_id}")
    etype = event_type or event.event_type
    if etype is None:
        raise LabelError(f"event {event.event_id} has no event_type and no annotation was provided")
    etype = parse_event_type(etype)
    label = derive_label(car_result.car, tau, neutral_band)
    return LabeledEvent(event.event_id, event.ticker, event.timestamp, etype, float(car_result.car),
                        label.direction, label.strength, event.text_ref, car_result.window_end)


def _record_to_json(r):
    d = {
        "news_ref": r.news_ref,
        "t0": r.t0.isoformat(),
        "ticker": r.ticker,
        "event_type": r.event_type,
        "direction": r.direction,
        "strength": r.strength,
        "car": r.car,
        "event_id": r.event_id,
        "window_end": r.window_end.isoformat() if r.window_end else None,
    }
    return json.dumps(d)


def _record_from_json(d):
    missing = [k for k in DATASET_FIELDS if k not in d]
    if missing:
        raise LabelError(f"missing fields {missing}")
    car = d["car"]
    if not isinstance(car, (int, float)) or isinstance(car, bool) or not math.isfinite(car):
        raise LabelError(f"car must be a finite number, got {car!r}")
    return LabeledEvent(
        event_id=d.get("event_id") or d["news_ref"],
        ticker=d["ticker"],
        t0=datetime.fromisoformat(d["t0"]),
        event_type=parse_event_type(d["event_type"]),
        car=float(car),
        direction=parse_direction(d["direction"]),
        strength=parse_strength(d["strength"]),
        news_ref=d["news_ref"],
        window_end=date.fromisoformat(d["window_end"]) if d.get("window_end") else None,
    )


def write_dataset(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(_record_to_json(r) + "\n")


def read_dataset(path):
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(_record_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise LabelError(f"{path}, line {lineno}: {e}") from None
    return out


@dataclass
class TypeStat:
    event_type: str
    count: int
    mean_abs_car: float
    quantiles: tuple  # CAR quantiles at QUANTILES; NaN when count == 0


@dataclass
class TypeStats:
    window: tuple  # (first, last) dates, inclusive
    stats: dict    # event_type -> TypeStat, all 10 types

    def mean_abs(self):
        return {k: s.mean_abs_car for k, s in self.stats.items()}

    def counts(self):
        return {k: s.count for k, s in self.stats.items()}

    def rows(self):
        for k in EVENT_TYPES:
            s = self.stats[k]
            yield [k, s.count, s.mean_abs_car, *s.quantiles]


def event_type_stats(records, window):
    """Per-type |CAR| statistics over records whose t0 date falls in ``window``."""
    lo, hi = window
    if lo > hi:
        raise ValueError("window is empty")
    groups = {k: [] for k in EVENT_TYPES}
    for r in records:
        if lo <= r.t0.date() <= hi:
            groups[r.event_type].append(r.car)
    stats = {}
    for k, cars in groups.items():
        if cars:
            a = np.array(cars)
            stats[k] = TypeStat(k, len(a), float(np.mean(np.abs(a))),
                                tuple(float(q) for q in np.quantile(a, QUANTILES)))
        else:
            stats[k] = TypeStat(k, 0, 0.0, tuple(float("nan") for _ in QUANTILES))
    return TypeStats((lo, hi), stats)

