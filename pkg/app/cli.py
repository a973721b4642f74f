"""Command-line interface: fetch, train, backtest, grid, report.

Exit codes: 0 success, 2 configuration / validation error, 3 runtime or data
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import pandas as pd

from . import config
from .backtest import run_backtest
from .data import TICKERS, AlignedSeries, load_aligned, split, with_history
from .providers.klines import cache_path, fetch_klines
from .report import load_reports, report_table, write_summary
from .run_store import RunStore, write_manifest
from .schema import (
    LEARNED_VARIANTS,
    ExperimentConfig,
    FeeSchedule,
    FeeScheme,
    Strategy,
    StrategyKind,
)
from .training import config_hash, data_fingerprint, grid_search, run_config
from .utils import CheckpointError, ConfigError, LevPairError, canonical_hash, sha256_file
from .worker import run_jobs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

GRID_CSV_FIELDS = ["config_hash", "mean_sharpe", "std_sharpe", "n_runs", "n_failed", "params"]


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    """Create the CLI argument parser."""

    parser = argparse.ArgumentParser(
        prog="levpair",
        description="Variance-controlled BTCUP/BTCDOWN allocation: data, training, backtests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="FILE", help="Experiment TOML file.")
    common.add_argument("--gap-fill", action=argparse.BooleanOptionalAction, default=None,
                        help="Forward-fill interior missing hours instead of failing.")

    p_fetch = sub.add_parser("fetch", parents=[common], help="Download and cache hourly candles.")
    p_fetch.add_argument("--start", default=None, help="First hour (UTC, inclusive).")
    p_fetch.add_argument("--end", default=None, help="End hour (UTC, exclusive).")
    p_fetch.add_argument("--data-dir", default=None, help="Cache directory (default: LEVPAIR_DATA_DIR).")
    p_fetch.add_argument("--no-cache", action="store_true", help="Ignore cached CSVs.")

    p_train = sub.add_parser("train", parents=[common], help="Train one configuration over all periods.")
    p_train.add_argument("--loss", choices=["baseline", "l1", "l2"], default=None)
    p_train.add_argument("--gamma", type=float, default=None)
    p_train.add_argument("--xi", type=float, default=None)
    p_train.add_argument("--fees", choices=[s.value for s in FeeScheme], default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--weight-decay", type=float, default=None)
    p_train.add_argument("--t-seq", type=int, default=None)
    p_train.add_argument("--runs-dir", default=None)

    p_bt = sub.add_parser("backtest", parents=[common], help="Backtest strategies over the test periods.")
    p_bt.add_argument("--strategies", type=_csv_list, default=None,
                      help="Comma list of: " + ",".join(k.value for k in StrategyKind))
    p_bt.add_argument("--fees", type=_csv_list, default=None, help="Comma list of fee schemes.")
    for kind in LEARNED_VARIANTS:
        p_bt.add_argument(f"--{kind.value}-run", default=None, metavar="DIR",
                          help=f"runs/<config-hash> directory holding {kind.label} checkpoints.")
    p_bt.add_argument("--out", default=None, help="Output directory for reports.")

    p_grid = sub.add_parser("grid", parents=[common], help="Hyperparameter grid search.")
    p_grid.add_argument("--max-configs", type=int, default=None)
    p_grid.add_argument("--seeds", type=lambda v: [int(x) for x in _csv_list(v)], default=None)
    p_grid.add_argument("--runs-dir", default=None)
    p_grid.add_argument("--workers", type=int, default=None)

    p_report = sub.add_parser("report", help="Re-render summary tables from report JSON files.")
    p_report.add_argument("directory", help="Backtest output directory.")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides: dict[str, Any] = {
        "data.gap_fill": get("gap_fill"),
        "data.start": get("start"),
        "data.end": get("end"),
        "train.loss.variant": get("loss"),
        "train.loss.gamma": get("gamma"),
        "train.loss.xi": get("xi"),
        "train.seed": get("seed"),
        "train.epochs": get("epochs"),
        "train.batch_size": get("batch_size"),
        "train.base_lr": get("lr"),
        "train.weight_decay": get("weight_decay"),
        "train.t_seq": get("t_seq"),
        "grid.max_configs": get("max_configs"),
        "grid.seeds": get("seeds"),
    }
    if args.command == "train":
        overrides["train.fee_scheme"] = get("fees")
    if args.command == "backtest":
        overrides["backtest.strategies"] = get("strategies")
        overrides["backtest.fee_schemes"] = get("fees")
    return overrides


def _csv_paths(exp: ExperimentConfig) -> dict[str, Path]:
    return {
        t: Path(exp.data.csv[t]) if t in exp.data.csv else cache_path(exp.data.symbols[t])
        for t in TICKERS
    }


def _load_data(exp: ExperimentConfig) -> tuple[AlignedSeries, list[str]]:
    paths = _csv_paths(exp)
    aligned = load_aligned(paths, gap_fill=exp.data.gap_fill)
    return aligned, [sha256_file(paths[t]) for t in TICKERS]


def _now() -> datetime:
    return datetime.now(timezone.utc)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fetch(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    started = _now()
    data_dir = Path(args.data_dir or config.DATA_DIR)
    artifacts: dict[str, str] = {}
    for ticker in TICKERS:
        symbol = exp.data.symbols[ticker]
        candles = fetch_klines(
            symbol, "1h", (exp.data.start, exp.data.end),
            cache_dir=data_dir, use_cache=not args.no_cache,
        )
        artifacts[ticker] = str(cache_path(symbol, data_dir))
        print(f"{ticker}: {len(candles)} candles -> {artifacts[ticker]}")
    digests = [sha256_file(p) for p in artifacts.values()]
    write_manifest(
        data_dir, "fetch", canonical_hash(exp.data.model_dump(mode="json"), extra=digests),
        started, artifacts, exp.model_dump(mode="json"), config_path=args.config,
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    started = _now()
    data, _ = _load_data(exp)
    store = RunStore(args.runs_dir or config.RUNS_DIR)
    cfg = exp.train
    h = config_hash(cfg, exp.periods, data)
    if store.is_completed(h, cfg.seed):
        logger.info("Run %s/%d already completed; skipping", h, cfg.seed)
        print(store.run_dir(h, cfg.seed))
        return EXIT_OK
    store.set_processing(h, cfg.seed)
    try:
        result = run_config(data, cfg, exp.periods, store, cfg_hash=h)
    except Exception as exc:
        store.set_failed(h, cfg.seed, f"{type(exc).__name__}: {exc}")
        raise
    store.set_completed(result)
    run_dir = store.run_dir(h, cfg.seed)
    write_manifest(
        run_dir, "train", h, started,
        {f"checkpoint_p{k}": v for k, v in result.checkpoints.items()},
        exp.model_dump(mode="json"), config_path=args.config,
    )
    print(run_dir)
    return EXIT_OK


def _learned_checkpoints(run_root: str | None, kind: StrategyKind, periods: Sequence[int]) -> dict[int, dict[int, str]]:
    """``{seed: {period: checkpoint}}`` for every seed directory under *run_root*."""
    if not run_root:
        raise CheckpointError(f"no run directory given for {kind.value} (use --{kind.value}-run)")
    root = Path(run_root)
    seeds = sorted(int(p.name) for p in root.iterdir() if p.is_dir() and p.name.isdigit()) if root.is_dir() else []
    if not seeds:
        raise CheckpointError(f"no seed directories under {root}")
    out: dict[int, dict[int, str]] = {}
    for seed in seeds:
        out[seed] = {}
        for p in periods:
            path = root / str(seed) / f"checkpoint_p{p}.lpck"
            if not path.is_file():
                raise CheckpointError(f"missing checkpoint {path}")
            out[seed][p] = str(path)
    return out


def cmd_backtest(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    started = _now()
    data, digests = _load_data(exp)
    bt = exp.backtest
    periods = [p.period for p in exp.periods]
    h = canonical_hash(exp.model_dump(mode="json"), extra=digests)
    out = Path(args.out or bt.run_dir or Path(config.RUNS_DIR) / f"backtest-{h}")

    jobs: list[tuple[Strategy, int, FeeScheme]] = []
    for kind in bt.strategies:
        if kind.learned:
            ckpts = _learned_checkpoints(getattr(args, f"{kind.value}_run", None), kind, periods)
            for seed_ckpts in ckpts.values():
                for p in periods:
                    for scheme in bt.fee_schemes:
                        jobs.append((Strategy(kind=kind, checkpoint=seed_ckpts[p], window=bt.window), p, scheme))
        else:
            for p in periods:
                for scheme in bt.fee_schemes:
                    jobs.append((Strategy(kind=kind, window=bt.window), p, scheme))

    # Enough warmup for every strategy; lookback-based benchmarks read only the tail.
    history = max(bt.window, exp.train.lookback + exp.train.norm_window - 1)
    tests = {}
    for spec in exp.periods:
        _, test_span = split(data, spec)
        tests[spec.period] = with_history(data, test_span, history)

    def job(item: tuple[Strategy, int, FeeScheme]):
        strategy, period, scheme = item
        return run_backtest(
            strategy, tests[period], FeeSchedule.for_scheme(scheme), period=period, config_hash=h,
            lookback=exp.train.lookback, norm_window=exp.train.norm_window,
        )

    reports = run_jobs(job, jobs)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    for r in reports:
        suffix = f"_s{r.seed}" if r.strategy.learned else ""
        path = out / f"report_{r.strategy.value}_p{r.period}_{r.fee_scheme.value}{suffix}.json"
        path.write_text(json.dumps(r.summary(), indent=2, sort_keys=True))
        trail = out / f"trail_{r.strategy.value}_p{r.period}_{r.fee_scheme.value}{suffix}.json"
        trail.write_text(r.model_dump_json())
        artifacts[path.stem] = str(path)

    tables = report_table(reports, bt.strategies, periods, bt.fee_schemes)
    artifacts.update(write_summary(tables, out))
    write_manifest(out, "backtest", h, started, artifacts, exp.model_dump(mode="json"), config_path=args.config)
    print(tables.text, end="")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    started = _now()
    data, _ = _load_data(exp)
    root = Path(args.runs_dir or config.RUNS_DIR)
    store = RunStore(root)
    outcome = grid_search(data, exp.grid, exp.periods, store, base=exp.train, max_workers=args.workers)

    summary_json = root / "grid_summary.json"
    summary_json.write_text(json.dumps([r.model_dump(mode="json") for r in outcome.summary], indent=2))
    summary_csv = root / "grid_summary.csv"
    frame = pd.DataFrame(
        [
            {**row.model_dump(exclude={"params"}), "params": json.dumps(row.params, sort_keys=True)}
            for row in outcome.summary
        ],
        columns=GRID_CSV_FIELDS,
    )
    frame.insert(0, "rank", range(1, len(frame) + 1))
    frame.to_csv(summary_csv, index=False)
    write_manifest(
        root, "grid", canonical_hash(exp.grid.model_dump(mode="json"), extra=[data_fingerprint(data)]),
        started, {"grid_summary_json": str(summary_json), "grid_summary_csv": str(summary_csv)},
        exp.model_dump(mode="json"), config_path=args.config,
    )
    for rank, row in enumerate(outcome.summary, start=1):
        mean = "failed" if row.mean_sharpe is None else f"{row.mean_sharpe:.4f} +/- {row.std_sharpe:.4f}"
        print(f"{rank:>3} {row.config_hash} {mean} ({row.n_runs} runs, {row.n_failed} failed)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.directory)
    reports = load_reports(directory)
    if not reports:
        raise ConfigError(f"no report_*.json files in {directory}")
    tables = report_table(reports)
    write_summary(tables, directory)
    print(tables.text, end="")
    return EXIT_OK


_COMMANDS = {"fetch": cmd_fetch, "train": cmd_train, "backtest": cmd_backtest, "grid": cmd_grid}


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point for the CLI."""

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config.log_startup_config()

    try:
        if args.command == "report":
            return cmd_report(args)
        exp = config.load_experiment_config(args.config, _overrides(args))
        return _COMMANDS[args.command](args, exp)
    except ConfigError as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LevPairError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("Unexpected error")
        print(f"Unexpected error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
