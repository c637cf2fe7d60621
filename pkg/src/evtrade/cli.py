"""Command-line entry point: ``evtrade <subcommand> ...``.

Each subcommand writes its outputs plus the effective ``config.json`` into
``--out``. Outputs carry no wall-clock timestamps, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import date, timedelta
from pathlib import Path
from types import SimpleNamespace

from . import plotting
from .backtest import (BacktestError, read_signals, run_backtest, run_sensitivity, signals_from_records,
                       write_metrics, write_nav, write_signals, write_trades, write_weights)
from .config import ConfigError, RunConfig
from .eventstudy import EventStudy, read_results, write_results
from .hgrm import PredictionError, score_pairs
from .labeling import QUANTILES, build_labeled_record, event_type_stats, read_dataset, write_dataset
from .marketdata import DataBundle, DataError, fmt_float, load_price_table
from .policylab import PolicyError, ToyPolicy, make_environment, train
from .synth import SpecError, SynthSpec, synth_universe
from .taxonomy import EVENT_TYPES, LabelError

logger = logging.getLogger("evtrade")

SENSITIVITY_DEFAULTS = {
    "holding": [str(h) for h in range(1, 11)],
    "max_position_ratio": ["0.05", "0.1", "0.2", "0.3", "0.5", "1.0"],
    "cost": ["0", "0.0005", "0.001", "0.0015", "0.003", "0.005"],
}


def _outdir(path):
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create output directory: {err.strerror}", path=str(d)) from None
    return d


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_float(v) if isinstance(v, float) else ("" if v is None else v) for v in r])


# -- subcommands ------------------------------------------------------------

def cmd_synth(args, cfg):
    spec = cfg.synth
    if args.spec:
        with open(args.spec) as f:
            spec = SynthSpec.from_dict({**spec.to_dict(), **json.load(f)})
    if args.seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    cfg = RunConfig.from_dict({**cfg.to_dict(), "synth": spec.to_dict()})
    out = _outdir(args.out)
    bundle, ledger = synth_universe(spec)
    bundle.write(out)
    ledger.write(out / "ledger.json")
    cfg.write(out / "config.json")
    logger.info("wrote %d stocks x %d days, %d events to %s", spec.n_stocks, spec.n_days, len(bundle.events), out)


def cmd_compute_car(args, cfg):
    bundle = DataBundle.load(args.data)
    out = _outdir(args.out)
    study = EventStudy(bundle, cfg.window, neutralize=not args.market_only)
    results, skipped = study.run()
    write_results(results, out / "car_results.csv")
    _write_csv(out / "skipped.csv", ("event_id", "reason"), skipped)
    cfg.write(out / "config.json")
    logger.info("%d CARs computed, %d events skipped", len(results), len(skipped))


def cmd_label(args, cfg):
    bundle = DataBundle.load(args.data)
    rows = read_results(args.results)
    events = {e.event_id: e for e in bundle.events}
    records = []
    for row in rows:
        ev = events.get(row["event_id"])
        if ev is None:
            raise DataError(f"result for unknown event {row['event_id']}", path=args.results)
        records.append(build_labeled_record(ev, SimpleNamespace(**row), cfg.labels.tau, cfg.labels.neutral_band))
    out = _outdir(args.out)
    write_dataset(records, out / "dataset.jsonl")
    write_signals(signals_from_records(records), out / "signals.csv")
    cfg.write(out / "config.json")
    logger.info("labeled %d events", len(records))


def cmd_stats(args, cfg):
    records = read_dataset(args.dataset)
    if not records:
        raise LabelError("dataset is empty")
    end = date.fromisoformat(args.end) if args.end else max(r.t0.date() for r in records)
    lo = end - timedelta(days=args.window - 1)
    stats = event_type_stats(records, (lo, end))
    out = _outdir(args.out)
    qcols = [f"q{int(round(q * 100)):02d}" for q in QUANTILES]
    _write_csv(out / "type_stats.csv", ("event_type", "count", "mean_abs_car", *qcols), stats.rows())
    cars = {k: [r.car for r in records if r.event_type == k and lo <= r.t0.date() <= end] for k in EVENT_TYPES}
    plotting.plot_car_distribution(cars, out / "car_distribution.png")
    cfg.write(out / "config.json")


def cmd_reward(args, cfg):
    with open(args.pairs) as f:
        lines = f.readlines()
    out_rows = [json.dumps(r, sort_keys=True) for r in score_pairs(lines, cfg.reward)]
    out = Path(args.out)
    if out.parent != Path(""):
        _outdir(out.parent)
    out.write_text("".join(r + "\n" for r in out_rows))
    logger.info("scored %d pairs", len(out_rows))


def cmd_train_toy(args, cfg):
    if args.iterations is not None or args.seed is not None:
        sched = dict(cfg.to_dict()["policy"]["schedule"])
        if args.iterations is not None:
            sched["iterations"] = args.iterations
        if args.seed is not None:
            sched["seed"] = args.seed
        cfg = cfg.override("policy", schedule=sched)
    p = cfg.policy
    env = make_environment(p.n_train, p.n_test, p.env_seed, p.flip_prob)
    policy = ToyPolicy.init(env.dim, car_std=p.car_std, scale=p.init_scale, seed=p.init_seed)
    _, trace = train(env, policy, p.schedule, cfg.reward)
    out = _outdir(args.out)
    cols = ("iteration", "mean_reward", "da", "eta", "kl")
    _write_csv(out / "trace.csv", cols, ([r[c] for c in cols] for r in trace))
    plotting.plot_training(trace, out / "training.png")
    cfg.write(out / "config.json")
    if trace:
        logger.info("final held-out DA %.3f, ETA %.3f", trace[-1]["da"], trace[-1]["eta"])


def _backtest_inputs(args, cfg):
    index = Path(args.index) if args.index else Path(args.prices).with_name("index.csv")
    prices = load_price_table(args.prices, index if index.exists() else None)
    signals = read_signals(args.signals)
    records = read_dataset(args.events)
    cfg = cfg.override("backtest", holding=args.holding, max_position_ratio=args.max_position_ratio,
                       cost=args.cost, weight_mode=args.weight_mode)
    return prices, signals, records, cfg


def cmd_backtest(args, cfg):
    prices, signals, records, cfg = _backtest_inputs(args, cfg)
    res = run_backtest(signals, prices, records, cfg.backtest)
    out = _outdir(args.out)
    write_nav(res.portfolio, out / "nav.csv")
    write_trades(res.portfolio, out / "trades.csv")
    write_metrics(res.metrics, out / "metrics.json")
    write_weights(res.weights, out / "weights.csv")
    (out / "log.txt").write_text("".join(line + "\n" for line in res.portfolio.log))
    plotting.plot_nav([d for d, _ in res.portfolio.nav], res.nav, out / "nav.png")
    if res.weights:
        plotting.plot_type_weights(res.weights[-1].weights, out / "weights.png")
    cfg.write(out / "config.json")
    m = res.metrics
    logger.info("total return %.4f, mdd %.4f, trades %d", m.total_return, m.mdd, len(res.portfolio.trades))


def cmd_sensitivity(args, cfg):
    prices, signals, records, cfg = _backtest_inputs(args, cfg)
    cast = int if args.parameter == "holding" else float
    raw = args.values.split(",") if args.values else SENSITIVITY_DEFAULTS[args.parameter]
    try:
        values = [cast(v) for v in raw]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {args.values!r} for {args.parameter}") from None
    rows = run_sensitivity(signals, prices, records, cfg.backtest, args.parameter, values)
    out = _outdir(args.out)
    cols = ("parameter", "value", "total_return", "sharpe", "mdd")
    _write_csv(out / "sensitivity.csv", cols, ([r[c] for c in cols] for r in rows))
    plotting.plot_sensitivity(rows, out / "sensitivity.png")
    cfg.write(out / "config.json")


# -- parser -----------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="evtrade", description="Event-driven CAR labeling, reward scoring and backtests.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic universe with planted event effects")
    sp.add_argument("--spec", help="JSON object of synth keys (overrides the config's synth section)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("compute-car", cmd_compute_car, "event-study CAR for every event in a data directory")
    sp.add_argument("--data", required=True, help="directory with prices.csv, index.csv, events.csv, metadata.csv")
    sp.add_argument("--market-only", action="store_true", help="skip factor neutralization")
    sp.add_argument("--out", required=True)

    sp = add("label", cmd_label, "derive direction/strength labels from CAR results")
    sp.add_argument("--data", required=True)
    sp.add_argument("--results", required=True, help="car_results.csv from compute-car")
    sp.add_argument("--out", required=True)

    sp = add("stats", cmd_stats, "per-type |CAR| statistics over a trailing window")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--window", type=_positive_int, required=True, help="calendar days ending at --end")
    sp.add_argument("--end", help="last date of the window (default: latest event date)")
    sp.add_argument("--out", required=True)

    sp = add("reward", cmd_reward, "score line-delimited prediction/truth pairs")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True, help="output JSONL file")

    sp = add("train-toy", cmd_train_toy, "train the toy policy with group-relative advantages")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (("backtest", cmd_backtest, "run the event-driven backtest"),
                            ("sensitivity", cmd_sensitivity, "sweep one backtest parameter")):
        sp = add(name, fn, help_)
        sp.add_argument("--signals", required=True)
        sp.add_argument("--prices", required=True)
        sp.add_argument("--index", help="benchmark file (default: index.csv next to --prices)")
        sp.add_argument("--events", required=True, help="labeled dataset (JSONL) for weights and metrics")
        sp.add_argument("--holding", type=int)
        sp.add_argument("--max-position-ratio", type=float)
        sp.add_argument("--cost", type=float)
        sp.add_argument("--weight-mode", choices=("type", "equal"))
        sp.add_argument("--out", required=True)
        if name == "sensitivity":
            sp.add_argument("--parameter", choices=tuple(SENSITIVITY_DEFAULTS), default="holding")
            sp.add_argument("--values", help="comma-separated values (default depends on --parameter)")
    return p


EXPECTED_ERRORS = (ConfigError, DataError, SpecError, LabelError, PredictionError, BacktestError, PolicyError,
                   ValueError, OSError)


def dispatch(argv=None):
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        args.func(args, cfg)
    except EXPECTED_ERRORS as err:
        print(f"evtrade {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
