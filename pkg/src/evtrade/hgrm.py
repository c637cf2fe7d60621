"""
Hierarchical gated reward for structured event predictions.

A wrong direction (positive vs negative) closes a hard gate that zeroes every
subordinate term; an event-type mismatch softly discounts the trading payoff.
The composed reward is

    R = w_dir*s_dir + g_dir*(w_evt*s_evt + w_pnl*r_pnl + w_mag*r_mag
                             + w_proc*r_proc + w_str*r_str)
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

from .taxonomy import LabelError, opposite, parse_direction, parse_event_type, parse_strength, sign_direction

logger = logging.getLogger(__name__)


class RewardConfigError(ValueError):
    pass


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    lambda_dir: float = 2.0
    lambda_evt: float = 0.5
    lambda_miss: float = 1.0
    alpha_discount: float = 0.5
    kappa: float = 0.003
    rho: float = 0.05
    sigma: float = 0.02
    tau: float = 0.01
    w_dir: float = 1.0
    w_evt: float = 0.3
    w_pnl: float = 2.0
    w_mag: float = 0.5
    w_proc: float = 0.1
    w_str: float = 0.3
    p_fs: float = 0.5
    p_fw: float = 0.2
    required_sections: tuple = ("event_analysis", "market_impact", "decision")
    length_cap: int = 2000
    length_penalty: float = 0.1
    question_penalty: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "required_sections", tuple(self.required_sections))
        checks = [
            (self.lambda_dir > 1, "lambda_dir must be > 1"),
            (self.lambda_evt > 0, "lambda_evt must be > 0"),
            (self.lambda_miss > 0, "lambda_miss must be > 0"),
            (0 < self.alpha_discount < 1, "alpha_discount must lie in (0, 1)"),
            (self.kappa >= 0, "kappa must be >= 0"),
            (self.rho > 0, "rho must be > 0"),
            (self.sigma > 0, "sigma must be > 0"),
            (self.tau > 0, "tau must be > 0"),
            (self.p_fs >= 0 and self.p_fw >= 0, "strength penalties must be >= 0"),
            (self.length_cap > 0, "length_cap must be > 0"),
            (self.length_penalty >= 0 and self.question_penalty >= 0, "process penalties must be >= 0"),
        ]
        for w in ("w_dir", "w_evt", "w_pnl", "w_mag", "w_proc", "w_str"):
            checks.append((getattr(self, w) >= 0, f"{w} must be >= 0"))
        for ok, msg in checks:
            if not ok:
                raise RewardConfigError(msg)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise RewardConfigError(f"unknown reward keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["required_sections"] = list(self.required_sections)
        return d


@dataclass(frozen=True)
class ResponseDoc:
    """Structural summary of a model response: section sizes and question count."""

    sections: dict = field(default_factory=dict)  # name -> character count
    question_count: int = 0
    length: int | None = None

    @property
    def total_length(self):
        return self.length if self.length is not None else sum(self.sections.values())


@dataclass(frozen=True)
class Prediction:
    car_hat: float | None = None
    direction_hat: str | None = None
    strength_hat: str | None = None
    event_type_hat: str | None = None
    response_doc: ResponseDoc | None = None

    def __post_init__(self):
        if self.car_hat is not None and not math.isfinite(self.car_hat):
            raise PredictionError("car_hat must be finite")
        if self.car_hat is None and self.direction_hat is None:
            raise PredictionError("prediction needs car_hat or direction_hat")

    @classmethod
    def from_dict(cls, d):
        try:
            doc = d.get("response_doc")
            if doc is not None:
                doc = ResponseDoc(dict(doc.get("sections", {})), int(doc.get("question_count", 0)), doc.get("length"))
            car = d.get("car_hat")
            return cls(
                car_hat=None if car is None else float(car),
                direction_hat=parse_direction(d.get("direction_hat"), allow_absent=True),
                strength_hat=parse_strength(d.get("strength_hat"), allow_absent=True),
                event_type_hat=parse_event_type(d.get("event_type_hat"), allow_absent=True),
                response_doc=doc,
            )
        except LabelError as e:
            raise PredictionError(str(e)) from None


@dataclass(frozen=True)
class NormalizedPrediction:
    car_hat: float | None
    direction: str
    strength: str
    event_type: str | None
    diagnostics: tuple = ()


@dataclass(frozen=True)
class RewardBreakdown:
    s_dir: float
    g_dir: int
    s_evt: float
    m_evt: float
    raw_pnl: float
    r_pnl: float
    r_mag: float
    r_proc: float
    r_str: float
    total: float
    prediction: NormalizedPrediction
    direction: str
    strength: str
    diagnostics: tuple = ()

    def to_dict(self):
        return {
            "s_dir": self.s_dir, "g_dir": self.g_dir, "s_evt": self.s_evt, "m_evt": self.m_evt,
            "raw_pnl": self.raw_pnl, "r_pnl": self.r_pnl, "r_mag": self.r_mag, "r_proc": self.r_proc,
            "r_str": self.r_str, "R": self.total,
            "car_hat": self.prediction.car_hat, "direction_hat": self.prediction.direction,
            "strength_hat": self.prediction.strength, "event_type_hat": self.prediction.event_type,
            "direction": self.direction, "strength": self.strength,
            "diagnostics": list(self.diagnostics),
        }


def normalize_prediction(pred, config):
    """Fill a missing direction from sign(car_hat) and a missing strength from tau.

    Values stated in the prediction are kept as given.
    """
    notes = []
    direction = pred.direction_hat
    if direction is None:
        if pred.car_hat is None:
            raise PredictionError("direction_hat and car_hat are both absent")
        direction = sign_direction(pred.car_hat)
    strength = pred.strength_hat
    if strength is None:
        if pred.car_hat is None:
            strength = "weak"
            notes.append("strength_hat and car_hat absent; strength taken as weak")
        else:
            strength = "strong" if abs(pred.car_hat) > config.tau else "weak"
    return NormalizedPrediction(pred.car_hat, direction, strength, pred.event_type_hat, tuple(notes))


def direction_score(d_hat, d, lambda_dir):
    if d_hat == d:
        return 1.0
    if d_hat == opposite(d):
        return -lambda_dir
    return 0.0


def event_type_score(e_hat, e, lambda_evt, lambda_miss, alpha):
    """``(s_evt, m_evt)``: match (1, 1), mismatch (-lambda_evt, alpha), absent (-lambda_miss, alpha)."""
    if e_hat is None:
        return -lambda_miss, alpha
    if e_hat == e:
        return 1.0, 1.0
    return -lambda_evt, alpha


def trade_payoff(d_hat, c, kappa):
    if d_hat == "positive":
        return c - kappa
    if d_hat == "negative":
        return -c - kappa
    return 0.0


def clipped_pnl_reward(payoff, m_evt, s_hat, g_dir, rho):
    if g_dir == 0 or s_hat != "strong":
        return 0.0
    return min(max(m_evt * payoff, -rho), rho)


def strength_regularizer(s_hat, s, p_fs, p_fw):
    if s_hat == s:
        return 0.0
    if s_hat == "strong":
        return -p_fs
    return -p_fw


def magnitude_reward(c_hat, c, sigma, g_dir):
    """exp(-|c_hat - c| / sigma) when the gate is open. Returns (value, diagnostic)."""
    if g_dir == 0:
        return 0.0, None
    if c_hat is None:
        return 0.0, "car_hat absent; magnitude reward set to 0"
    return math.exp(-abs(c_hat - c) / sigma), None


def process_reward(doc, g_dir, config):
    """Section coverage minus length and self-questioning penalties, clipped to [0, 1]."""
    if g_dir == 0 or doc is None:
        return 0.0
    required = config.required_sections
    present = sum(1 for s in required if doc.sections.get(s, 0) > 0)
    coverage = present / len(required) if required else 1.0
    overflow = max(0.0, doc.total_length / config.length_cap - 1.0)
    score = coverage - config.length_penalty * overflow - config.question_penalty * doc.question_count
    return min(max(score, 0.0), 1.0)


def compose_reward(pred, truth, config=None):
    """Score ``pred`` against ``truth = (c, e)``; returns every component."""
    config = config or RewardConfig()
    c, e = truth
    if not math.isfinite(c):
        raise PredictionError("true car must be finite")
    norm = normalize_prediction(pred, config)
    notes = list(norm.diagnostics)
    d = sign_direction(c)
    s = "strong" if abs(c) > config.tau else "weak"

    s_dir = direction_score(norm.direction, d, config.lambda_dir)
    g_dir = 1 if s_dir >= 0 else 0
    s_evt, m_evt = event_type_score(norm.event_type, e, config.lambda_evt, config.lambda_miss,
                                    config.alpha_discount)
    raw_pnl = trade_payoff(norm.direction, c, config.kappa)
    r_pnl = clipped_pnl_reward(raw_pnl, m_evt, norm.strength, g_dir, config.rho)
    r_mag, note = magnitude_reward(norm.car_hat, c, config.sigma, g_dir)
    if note:
        notes.append(note)
    r_proc = process_reward(pred.response_doc, g_dir, config)
    r_str = strength_regularizer(norm.strength, s, config.p_fs, config.p_fw) if g_dir else 0.0

    total = config.w_dir * s_dir + g_dir * (
        config.w_evt * s_evt + config.w_pnl * r_pnl + config.w_mag * r_mag
        + config.w_proc * r_proc + config.w_str * r_str
    )
    return RewardBreakdown(s_dir, g_dir, s_evt, m_evt, raw_pnl, r_pnl, r_mag, r_proc, r_str, total,
                           norm, d, s, tuple(notes))


def score_pairs(lines, config=None):
    """Score line-delimited ``{"prediction": {...}, "truth": {"car": c, "event_type": e}}`` records.

    Yields one output dict per non-blank input line.
    """
    config = config or RewardConfig()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pred = Prediction.from_dict(rec["prediction"])
            truth = rec["truth"]
            c = float(truth["car"])
            e = parse_event_type(truth["event_type"])
        except (ValueError, KeyError, TypeError, LabelError) as err:
            raise PredictionError(f"line {lineno}: {err}") from None
        out = {"line": lineno}
        out.update(compose_reward(pred, (c, e), config).to_dict())
        yield out
