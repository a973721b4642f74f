#!/usr/bin/env python3
"""Scaled learning experiment on a synthetic leveraged pair.

Generates a seeded OU-driven BTC path with +/-3x tracking tokens, trains NS
on the first ``--train-hours`` hours with several seeds, and backtests on the
following ``--test-hours`` under zero fees. Checks:

  1. median-of-seeds NS test Sharpe exceeds EWP and GMVP test Sharpe;
  2. SVC1 (gamma 0.2, xi chosen on a validation tail of the training span)
     has test MDD no larger than the median NS run;
  3. one NS training run finishes inside ``--max-train-seconds``.

Usage:

  python scripts/scaled_experiment.py --out runs/scaled --seeds 0,1,2,3,4

Exit codes:
  0  All checks passed.
  1  One or more checks failed.
  2  Invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.backtest import run_backtest  # noqa: E402
from app.data import AlignedSeries, with_history  # noqa: E402
from app.schema import (  # noqa: E402
    FeeSchedule,
    LossConfig,
    LossVariant,
    Strategy,
    StrategyKind,
    TrainConfig,
)
from app.synthetic import synthetic_aligned  # noqa: E402
from app.training import train  # noqa: E402
from app.utils import LevPairError  # noqa: E402

logger = logging.getLogger("scaled_experiment")

XI_CANDIDATES = (1e-5, 1e-4, 1e-3)
VALIDATION_FRACTION = 0.2


def _test_span(data: AlignedSeries, start: int, stop: int, history: int) -> AlignedSeries:
    return with_history(data, data.rows(start, stop), history)


def _backtest_learned(cfg: TrainConfig, kind: StrategyKind, fit: AlignedSeries, test: AlignedSeries, ckpt: Path) -> dict:
    outcome = train(fit, cfg, checkpoint_path=str(ckpt))
    report = run_backtest(Strategy(kind=kind, checkpoint=str(ckpt)), test, FeeSchedule(), period=1)
    return {
        "seed": cfg.seed,
        "sharpe": report.metrics.sharpe,
        "fapv": report.metrics.fapv,
        "mdd": report.metrics.mdd,
        "final_loss": outcome.epoch_losses[-1],
        "initial_loss": outcome.epoch_losses[0],
        "wall_clock_s": outcome.wall_clock_s,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--train-hours", type=int, default=4000)
    parser.add_argument("--test-hours", type=int, default=1000)
    parser.add_argument("--data-seed", type=int, default=7)
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--t-seq", type=int, default=16)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--gamma", type=float, default=0.2)
    parser.add_argument("--max-train-seconds", type=float, default=600.0)
    parser.add_argument("--out", default="runs/scaled")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        print(f"Error: bad --seeds {args.seeds!r}", file=sys.stderr)
        return 2
    if not seeds or args.train_hours < 500 or args.test_hours < 3:
        print("Error: need at least one seed, 500 train hours and 3 test hours", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_train, n_test = args.train_hours, args.test_hours
    data = synthetic_aligned(n_train + n_test, seed=args.data_seed)
    train_span = data.rows(0, n_train)

    base = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, base_lr=args.lr,
        t_seq=args.t_seq, hidden_size=args.hidden, enforce_search_grid=False,
    )
    history = base.lookback + base.norm_window - 1
    test = _test_span(data, n_train, n_train + n_test, history)

    try:
        # --- Benchmarks ---
        benchmarks = {}
        for kind in (StrategyKind.EWP, StrategyKind.GMVP):
            report = run_backtest(Strategy(kind=kind), test, FeeSchedule(), period=1)
            benchmarks[kind.label] = report.metrics.model_dump()

        # --- NS over seeds ---
        ns_runs = []
        for seed in seeds:
            cfg = base.model_copy(update={"seed": seed})
            ns_runs.append(_backtest_learned(cfg, StrategyKind.NS, train_span, test, out / f"ns_s{seed}.lpck"))
            logger.info("NS seed %d: sharpe=%.4f mdd=%.4f", seed, ns_runs[-1]["sharpe"], ns_runs[-1]["mdd"])
        ranked = sorted(ns_runs, key=lambda r: r["sharpe"])
        ns_median = ranked[(len(ranked) - 1) // 2]

        # --- SVC1: pick xi on the validation tail of the training span ---
        n_fit = int(n_train * (1.0 - VALIDATION_FRACTION))
        fit_span = data.rows(0, n_fit)
        val_span = _test_span(data, n_fit, n_train, history)
        svc_base = base.model_copy(update={"seed": ns_median["seed"]})
        val_scores = {}
        for xi in XI_CANDIDATES:
            cfg = svc_base.model_copy(update={"loss": LossConfig(variant=LossVariant.L1, gamma=args.gamma, xi=xi)})
            val = _backtest_learned(cfg, StrategyKind.SVC1, fit_span, val_span, out / f"svc1_val_xi{xi:g}.lpck")
            val_scores[xi] = val["sharpe"]
        best_xi = max(val_scores, key=val_scores.get)
        svc_cfg = svc_base.model_copy(update={"loss": LossConfig(variant=LossVariant.L1, gamma=args.gamma, xi=best_xi)})
        svc1 = _backtest_learned(svc_cfg, StrategyKind.SVC1, train_span, test, out / "svc1.lpck")
    except LevPairError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2

    checks = {
        "ns_beats_ewp": ns_median["sharpe"] > benchmarks["EWP"]["sharpe"],
        "ns_beats_gmvp": ns_median["sharpe"] > benchmarks["GMVP"]["sharpe"],
        "svc1_mdd_le_ns": svc1["mdd"] <= ns_median["mdd"],
        "ns_train_time": max(r["wall_clock_s"] for r in ns_runs) < args.max_train_seconds,
    }
    passed = all(checks.values())

    print("=" * 60)
    for label, m in benchmarks.items():
        print(f"  {label:<6} sharpe={m['sharpe']:.4f} fapv={m['fapv']:.4f} mdd={m['mdd']:.4f}")
    print(
        f"  NS     median sharpe={ns_median['sharpe']:.4f} (seed {ns_median['seed']}) "
        f"mean={statistics.mean(r['sharpe'] for r in ns_runs):.4f} mdd={ns_median['mdd']:.4f}"
    )
    print(f"  SVC1   sharpe={svc1['sharpe']:.4f} mdd={svc1['mdd']:.4f} (xi={best_xi:g})")
    for name, ok in checks.items():
        print(f"  {'PASS' if ok else 'FAIL'}: {name}")

    report = {
        "train_hours": n_train,
        "test_hours": n_test,
        "data_seed": args.data_seed,
        "config": base.model_dump(mode="json"),
        "benchmarks": benchmarks,
        "ns_runs": ns_runs,
        "ns_median_seed": ns_median["seed"],
        "svc1": {**svc1, "gamma": args.gamma, "xi": best_xi, "validation_sharpe": {str(k): v for k, v in val_scores.items()}},
        "checks": checks,
        "passed": passed,
    }
    path = out / "scaled_experiment.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"\n  Report written to {path}")
    return 0 if passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
