"""Closed label sets shared by labeling, reward scoring and backtesting."""

EVENT_TYPES = (
    "personal_behavior",
    "equity_change",
    "asset_change",
    "dividend",
    "risk_warning",
    "financing",
    "financial_status",
    "violation",
    "industry",
    "rating_adjustment",
)

DIRECTIONS = ("positive", "negative", "neutral")
STRENGTHS = ("strong", "weak")

# Marker for an event type the model failed to produce.
ABSENT = None


class LabelError(ValueError):
    """Raised when a label falls outside its closed set."""


def parse_event_type(value, allow_absent=False):
    if value is None or value == "":
        if allow_absent:
            return ABSENT
        raise LabelError("event_type is missing")
    if value not in EVENT_TYPES:
        raise LabelError(f"unknown event_type {value!r}")
    return value


def parse_direction(value, allow_absent=False):
    if value is None or value == "":
        if allow_absent:
            return None
        raise LabelError("direction is missing")
    if value not in DIRECTIONS:
        raise LabelError(f"unknown direction {value!r}")
    return value


def parse_strength(value, allow_absent=False):
    if value is None or value == "":
        if allow_absent:
            return None
        raise LabelError("strength is missing")
    if value not in STRENGTHS:
        raise LabelError(f"unknown strength {value!r}")
    return value


def sign_direction(x, band=0.0):
    """Map a signed number to a direction label; ``|x| <= band`` is neutral."""
    if x > band:
        return "positive"
    if x < -band:
        return "negative"
    return "neutral"


def opposite(direction):
    return {"positive": "negative", "negative": "positive"}.get(direction)
