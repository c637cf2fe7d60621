"""Run configuration: one JSON document with a section per module.

Every section is optional; missing keys take module defaults. Unknown keys and
out-of-range values are rejected with the offending key named.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .backtest import BacktestConfig
from .eventstudy import WindowSpec
from .hgrm import RewardConfig
from .policylab import Schedule
from .synth import SynthSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabelConfig:
    tau: float = 0.01
    neutral_band: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.neutral_band < 0:
            raise ValueError("neutral_band must be >= 0")


@dataclass(frozen=True)
class PolicyConfig:
    n_train: int = 2000
    n_test: int = 500
    env_seed: int = 0
    flip_prob: float = 0.0
    car_std: float = 0.02
    init_scale: float = 0.1
    init_seed: int = 1
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if not 0 <= self.flip_prob <= 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5]")
        if self.car_std < 0:
            raise ValueError("car_std must be >= 0")


def _build(cls, section, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{section}] {err}") from None


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


SECTIONS = ("window", "labels", "reward", "backtest", "synth", "policy")


@dataclass(frozen=True)
class RunConfig:
    window: WindowSpec = field(default_factory=WindowSpec)
    labels: LabelConfig = field(default_factory=LabelConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(d) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        synth = d.get("synth") or {}
        if not isinstance(synth, dict):
            raise ConfigError("[synth] must be an object")
        try:
            spec = SynthSpec.from_dict(synth)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[synth] {err}") from None
        policy = dict(d.get("policy") or {})
        schedule = _build(Schedule, "policy.schedule", policy.pop("schedule", None))
        pol = _build(PolicyConfig, "policy", policy)
        return cls(
            window=_build(WindowSpec, "window", d.get("window")),
            labels=_build(LabelConfig, "labels", d.get("labels")),
            reward=_build(RewardConfig, "reward", d.get("reward")),
            backtest=_build(BacktestConfig, "backtest", d.get("backtest")),
            synth=spec,
            policy=PolicyConfig(**{**{f.name: getattr(pol, f.name) for f in fields(PolicyConfig)},
                                   "schedule": schedule}),
        )

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None
        except OSError as err:
            raise ConfigError(f"{path}: {err.strerror}") from None
        return cls.from_dict(data)

    def to_dict(self):
        return {
            "window": asdict(self.window),
            "labels": asdict(self.labels),
            "reward": self.reward.to_dict(),
            "backtest": self.backtest.to_dict(),
            "synth": _plain(self.synth.to_dict()),
            "policy": _plain(asdict(self.policy)),
        }

    def override(self, section, **values):
        """Copy with some keys of one section replaced (``None`` values ignored)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        d = self.to_dict()
        d[section].update(values)
        return RunConfig.from_dict(d)

    def write(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
