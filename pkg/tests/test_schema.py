"""Tests for app.schema models."""

from __future__ import annotations

import unittest
from datetime import datetime, timezone

from pydantic import ValidationError

from app.schema import (
    DEFAULT_PERIODS,
    MANAGEMENT_FEE,
    TRADING_FEE,
    BacktestReport,
    Candle,
    DataConfig,
    ExperimentConfig,
    FeeSchedule,
    FeeScheme,
    GridConfig,
    MetricsRow,
    RunResult,
    SplitSpec,
    Strategy,
    StrategyKind,
    TrainConfig,
)

UTC = timezone.utc


class TestCandle(unittest.TestCase):
    def _candle(self, **kw) -> Candle:
        base = dict(open_time="2021-01-01T00:00:00Z", open=1.0, high=1.2, low=0.9, close=1.1, volume=5.0)
        base.update(kw)
        return Candle(**base)

    def test_valid(self) -> None:
        c = self._candle()
        self.assertEqual(c.open_time, datetime(2021, 1, 1, tzinfo=UTC))

    def test_not_hour_aligned(self) -> None:
        with self.assertRaises(ValidationError):
            self._candle(open_time="2021-01-01T00:30:00Z")

    def test_non_positive_price(self) -> None:
        with self.assertRaises(ValidationError):
            self._candle(low=0.0)

    def test_negative_volume(self) -> None:
        with self.assertRaises(ValidationError):
            self._candle(volume=-1.0)

    def test_high_below_close(self) -> None:
        with self.assertRaises(ValidationError):
            self._candle(high=1.05)


class TestSplitSpec(unittest.TestCase):
    def test_transposed_day_month_repaired(self) -> None:
        spec = SplitSpec(**DEFAULT_PERIODS[2])
        self.assertEqual(spec.test_end, datetime(2021, 12, 30, 23, tzinfo=UTC))

    def test_default_periods_are_walk_forward(self) -> None:
        specs = [SplitSpec(**p) for p in DEFAULT_PERIODS]
        self.assertEqual([s.period for s in specs], [1, 2, 3])
        for a, b in zip(specs, specs[1:]):
            self.assertLess(a.test_end, b.test_start)
            self.assertEqual(a.train_start, b.train_start)

    def test_overlapping_ranges_rejected(self) -> None:
        p = dict(DEFAULT_PERIODS[0])
        with self.assertRaises(ValidationError):
            SplitSpec(**{**p, "test_start": p["train_end"]})
        with self.assertRaises(ValidationError):
            SplitSpec(**{**p, "train_end": "2020-05-14 23:00"})
        with self.assertRaises(ValidationError):
            SplitSpec(**{**p, "test_end": "2021-07-03 23:30"})


class TestFees(unittest.TestCase):
    def test_schemes(self) -> None:
        fee = FeeSchedule.for_scheme("fee")
        self.assertEqual((fee.c, fee.m), (TRADING_FEE, MANAGEMENT_FEE))
        self.assertFalse(fee.is_free)
        self.assertTrue(FeeSchedule.for_scheme(FeeScheme.NO_FEE).is_free)

    def test_bounds(self) -> None:
        with self.assertRaises(ValidationError):
            FeeSchedule(c=1.0)
        with self.assertRaises(ValidationError):
            FeeSchedule(management_hour=24)


class TestTrainConfig(unittest.TestCase):
    def test_defaults_are_in_grid(self) -> None:
        cfg = TrainConfig()
        self.assertEqual((cfg.batch_size, cfg.epochs, cfg.lookback, cfg.norm_window), (64, 80, 48, 12))

    def test_off_grid_rejected(self) -> None:
        with self.assertRaises(ValidationError):
            TrainConfig(batch_size=100)
        with self.assertRaises(ValidationError):
            TrainConfig(base_lr=2e-3)

    def test_off_grid_allowed_when_not_enforced(self) -> None:
        cfg = TrainConfig(batch_size=100, epochs=3, enforce_search_grid=False)
        self.assertEqual(cfg.batch_size, 100)

    def test_gamma_bounds(self) -> None:
        with self.assertRaises(ValidationError):
            TrainConfig(loss={"variant": "l1", "gamma": 1.5, "xi": 1e-4})

    def test_grid_rejects_bad_gamma_and_xi(self) -> None:
        with self.assertRaises(ValidationError):
            GridConfig(gammas=[-0.1])
        with self.assertRaises(ValidationError):
            GridConfig(xis=[-1e-6])


class TestStrategy(unittest.TestCase):
    def test_learned_needs_checkpoint(self) -> None:
        with self.assertRaises(ValidationError):
            Strategy(kind=StrategyKind.NS)
        self.assertEqual(Strategy(kind="svc1", checkpoint="x.lpck").kind, StrategyKind.SVC1)

    def test_labels(self) -> None:
        self.assertEqual(StrategyKind.BTC_HOLD.label, "BTC")
        self.assertEqual(StrategyKind.SVC2.label, "SVC2")
        self.assertTrue(StrategyKind.NS.learned)
        self.assertFalse(StrategyKind.GMVP.learned)


class TestReports(unittest.TestCase):
    def test_summary_is_flat(self) -> None:
        report = BacktestReport(
            strategy="ewp", period=2, fee_scheme="fee",
            metrics=MetricsRow(sharpe=0.1, fapv=1.02, mdd=0.05), n_steps=10,
        )
        summary = report.summary()
        self.assertEqual(summary["strategy"], "ewp")
        self.assertEqual(summary["fee_scheme"], "fee")
        self.assertEqual(summary["fapv"], 1.02)
        self.assertIsNone(summary["seed"])

    def test_metrics_row_bounds(self) -> None:
        with self.assertRaises(ValidationError):
            MetricsRow(sharpe=0.0, fapv=0.0, mdd=0.0)
        with self.assertRaises(ValidationError):
            MetricsRow(sharpe=0.0, fapv=1.0, mdd=1.5)

    def test_average_test_sharpe(self) -> None:
        run = RunResult(config_hash="h", seed=0, test_reports=[{"sharpe": 0.2}, {"sharpe": 0.4}])
        self.assertAlmostEqual(run.average_test_sharpe, 0.3)
        self.assertIsNone(RunResult(config_hash="h", seed=0).average_test_sharpe)


class TestExperimentConfig(unittest.TestCase):
    def test_defaults(self) -> None:
        exp = ExperimentConfig()
        self.assertEqual(len(exp.periods), 3)
        self.assertEqual(len(exp.backtest.strategies), 7)
        self.assertEqual(exp.data.symbols["BTCUP"], "BTCUPUSDT")

    def test_data_range_must_be_ordered(self) -> None:
        with self.assertRaises(ValidationError):
            DataConfig(start="2021-01-02T00:00:00Z", end="2021-01-01T00:00:00Z")

    def test_data_symbols_complete(self) -> None:
        with self.assertRaises(ValidationError):
            DataConfig(symbols={"BTC": "BTCUSDT"})


if __name__ == "__main__":
    unittest.main()
