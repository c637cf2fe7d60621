"""Figures written next to the tabular reports. PNG output is byte-stable for identical inputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .taxonomy import EVENT_TYPES  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_nav(dates, nav, path, title="NAV"):
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(np.arange(len(nav)), nav, lw=1.2)
    if len(dates):
        ticks = np.linspace(0, len(dates) - 1, min(6, len(dates))).astype(int)
        ax.set_xticks(ticks)
        ax.set_xticklabels([str(dates[i]) for i in ticks], rotation=30, ha="right")
    ax.set_ylabel("NAV")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_type_weights(weights, path, title="Event-type weights"):
    """Bar chart of one weight vector (dict event_type -> weight)."""
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(EVENT_TYPES)), [weights.get(k, 0.0) for k in EVENT_TYPES])
    ax.set_xticks(range(len(EVENT_TYPES)))
    ax.set_xticklabels(EVENT_TYPES, rotation=45, ha="right")
    ax.set_ylabel("weight")
    ax.set_title(title)
    return _save(fig, path)


def plot_car_distribution(cars_by_type, path, title="CAR by event type"):
    labels = [k for k in EVENT_TYPES if len(cars_by_type.get(k, ()))]
    fig, ax = plt.subplots(figsize=(8, 4))
    if labels:
        ax.boxplot([cars_by_type[k] for k in labels], showfliers=False)
        ax.set_xticks(range(1, len(labels) + 1))
        ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_ylabel("CAR")
    ax.set_title(title)
    return _save(fig, path)


def plot_sensitivity(rows, path):
    """Total return and annualized Sharpe against the swept value."""
    x = [r["value"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(x, [r["total_return"] for r in rows], marker="o")
    a1.set_ylabel("total return")
    a2.plot(x, [np.nan if r["sharpe"] is None else r["sharpe"] for r in rows], marker="o")
    a2.set_ylabel("Sharpe (annualized)")
    name = rows[0]["parameter"] if rows else ""
    for a in (a1, a2):
        a.set_xlabel(name)
        a.grid(alpha=0.3)
    return _save(fig, path)


def plot_training(trace, path, smooth=20):
    from .policylab import moving_average

    it = [r["iteration"] for r in trace]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    if trace:
        a1.plot(it, moving_average([r["mean_reward"] for r in trace], smooth))
        a2.plot(it, [r["da"] for r in trace], label="DA")
        a2.plot(it, [r["eta"] for r in trace], label="ETA")
        a2.legend()
    a1.set_ylabel("mean reward")
    a2.set_ylabel("held-out accuracy")
    for a in (a1, a2):
        a.set_xlabel("iteration")
        a.grid(alpha=0.3)
    return _save(fig, path)
