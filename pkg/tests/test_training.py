"""Tests for app.training (trajectories, training loop, grid search)."""

from __future__ import annotations

import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from app.nn import autodiff as ad
from app.nn.model import PARAM_NAMES, init_params, load_checkpoint
from app.run_store import RunStore
from app.schema import (
    FeeSchedule,
    FeeScheme,
    GridConfig,
    LossConfig,
    LossVariant,
    RunResult,
    SplitSpec,
    TrainConfig,
)
from app.synthetic import synthetic_aligned
from app.training import (
    config_hash,
    expand_grid,
    grid_search,
    make_trajectories,
    run_config,
    segment_loss,
    summarize,
    train,
)
from app.utils import HOUR, ConfigError, InsufficientHistoryError, NumericalError, RangeError, SeedError


def _cfg(**overrides) -> TrainConfig:
    base = dict(
        enforce_search_grid=False, batch_size=8, epochs=1, base_lr=1e-2, t_seq=4,
        lookback=6, norm_window=4, beta_window=8, hidden_size=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrajectories(unittest.TestCase):
    def setUp(self) -> None:
        self.data = synthetic_aligned(40, seed=1)

    def test_segment_count(self) -> None:
        tset = make_trajectories(self.data, _cfg())
        # decisions at rows 9 .. 38
        self.assertEqual(tset.n_steps, 30)
        self.assertEqual(len(tset), 27)
        self.assertEqual(tset.anchors[0], 9)
        self.assertEqual(tset.times[0], self.data.timestamps[9] + HOUR)
        self.assertEqual(tset.windows(np.array([0, 5])).shape, (2, 6, 18))
        np.testing.assert_array_equal(tset.steps([0, 2])[1], [2, 3, 4, 5])

    def test_free_scheme_has_no_management_fee(self) -> None:
        tset = make_trajectories(self.data, _cfg())
        self.assertTrue(np.all(tset.mgmt == 1.0))
        fee = make_trajectories(self.data, _cfg(fee_scheme=FeeScheme.FEE))
        self.assertTrue(np.all(fee.mgmt <= 1.0))

    def test_too_short(self) -> None:
        with self.assertRaises(InsufficientHistoryError):
            make_trajectories(synthetic_aligned(14, seed=1), _cfg(t_seq=8))

    def test_data_past_train_end(self) -> None:
        with self.assertRaises(RangeError):
            make_trajectories(self.data, _cfg(), not_after=self.data.timestamps[20])


class TestSegmentLoss(unittest.TestCase):
    def setUp(self) -> None:
        self.data = synthetic_aligned(40, seed=2)

    def test_xi_zero_matches_baseline(self) -> None:
        cfg = _cfg()
        tset = make_trajectories(self.data, cfg)
        params = init_params(0, hidden=4)
        fees = FeeSchedule.for_scheme(FeeScheme.FEE)
        segs = list(range(len(tset)))
        base = segment_loss(params, tset, segs, LossConfig(), fees)
        l1 = segment_loss(params, tset, segs, LossConfig(variant=LossVariant.L1, gamma=0.3, xi=0.0), fees)
        self.assertEqual(float(base), float(l1))

    def test_gradient_matches_finite_differences(self) -> None:
        cfg = _cfg(t_seq=8, hidden_size=8, fee_scheme=FeeScheme.FEE)
        tset = make_trajectories(self.data, cfg)
        fees = FeeSchedule.for_scheme(FeeScheme.FEE)
        params = init_params(4, hidden=8)
        segs = [0, 5, 11, 17, 22]
        baseline = LossConfig()
        variants = {
            "baseline": baseline,
            "l1": LossConfig(variant=LossVariant.L1, gamma=0.05, xi=100.0),
            "l2": LossConfig(variant=LossVariant.L2, gamma=0.05, xi=100.0),
        }
        base_value = float(segment_loss(params, tset, segs, baseline, fees))
        eps = 1e-5

        for label, loss_cfg in variants.items():
            with self.subTest(variant=label):
                penalty = float(segment_loss(params, tset, segs, loss_cfg, fees)) - base_value
                if loss_cfg.variant is LossVariant.BASELINE:
                    self.assertEqual(penalty, 0.0)
                else:
                    self.assertGreater(penalty, 0.0)

                tape = ad.Tape()
                leaves = {n: tape.var(params[n]) for n in PARAM_NAMES}
                grads = dict(zip(PARAM_NAMES, tape.backward(
                    segment_loss(leaves, tset, segs, loss_cfg, fees), wrt=[leaves[n] for n in PARAM_NAMES],
                )))

                rng = np.random.default_rng(0)
                checked = 0
                for name in PARAM_NAMES:
                    for _ in range(24):
                        idx = tuple(int(rng.integers(0, s)) for s in params[name].shape)
                        analytic = grads[name][idx]
                        if abs(analytic) <= 1e-6:
                            continue
                        hi = {k: v.copy() for k, v in params.items()}
                        lo = {k: v.copy() for k, v in params.items()}
                        hi[name][idx] += eps
                        lo[name][idx] -= eps
                        numeric = (float(segment_loss(hi, tset, segs, loss_cfg, fees))
                                   - float(segment_loss(lo, tset, segs, loss_cfg, fees))) / (2 * eps)
                        err = abs(analytic - numeric) / abs(analytic)
                        self.assertLess(err, 1e-4, f"{name}{idx}: {analytic} vs {numeric}")
                        checked += 1
                self.assertGreaterEqual(checked, 40)

    def test_small_gradient_step_lowers_loss(self) -> None:
        cfg = _cfg()
        tset = make_trajectories(self.data, cfg)
        fees = FeeSchedule()
        segs = list(range(len(tset)))
        params = init_params(1, hidden=4)

        tape = ad.Tape()
        leaves = {n: tape.var(params[n]) for n in PARAM_NAMES}
        loss = segment_loss(leaves, tset, segs, cfg.loss, fees)
        before = float(np.asarray(ad.value_of(loss)))
        grads = dict(zip(PARAM_NAMES, tape.backward(loss, wrt=[leaves[n] for n in PARAM_NAMES])))
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        self.assertGreater(norm, 0.0)
        stepped = {n: params[n] - 1e-4 * grads[n] / norm for n in PARAM_NAMES}
        self.assertLess(float(segment_loss(stepped, tset, segs, cfg.loss, fees)), before)


class TestTrain(unittest.TestCase):
    def setUp(self) -> None:
        self.data = synthetic_aligned(40, seed=3)
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_deterministic(self) -> None:
        cfg = _cfg(epochs=2)
        a = train(self.data, cfg)
        b = train(self.data, cfg)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        self.assertEqual(a.epoch_losses, b.epoch_losses)
        self.assertEqual(len(a.epoch_losses), 2)
        self.assertEqual(a.n_segments, 27)

    def test_training_lowers_epoch_loss(self) -> None:
        out = train(synthetic_aligned(200, seed=0), _cfg(epochs=15))
        self.assertEqual(len(out.epoch_losses), 15)
        self.assertTrue(all(np.isfinite(out.epoch_losses)))
        self.assertLess(out.epoch_losses[-1], out.epoch_losses[0])

    def test_l1_with_zero_xi_trains_like_baseline(self) -> None:
        base = train(self.data, _cfg(epochs=3, fee_scheme=FeeScheme.FEE))
        l1 = train(self.data, _cfg(
            epochs=3, fee_scheme=FeeScheme.FEE, loss=LossConfig(variant=LossVariant.L1, gamma=0.2, xi=0.0),
        ))
        self.assertEqual(base.epoch_losses, l1.epoch_losses)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(base.params[name], l1.params[name])

    def test_seed_changes_result(self) -> None:
        a = train(self.data, _cfg(seed=0))
        b = train(self.data, _cfg(seed=1))
        self.assertFalse(np.array_equal(a.params["W_o"], b.params["W_o"]))

    def test_identical_checkpoint_bytes(self) -> None:
        cfg = _cfg(epochs=2, fee_scheme=FeeScheme.FEE)
        a, b = self.dir / "a.lpck", self.dir / "b.lpck"
        train(self.data, cfg, checkpoint_path=str(a))
        train(self.data, cfg, checkpoint_path=str(b))
        self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_checkpoint_written(self) -> None:
        path = self.dir / "ck.lpck"
        out = train(self.data, _cfg(fee_scheme=FeeScheme.FEE), checkpoint_path=str(path))
        params, header = load_checkpoint(path)
        np.testing.assert_array_equal(params["W_x"], out.params["W_x"])
        self.assertEqual(header["extra"]["lookback"], 6)
        self.assertEqual(header["extra"]["fee_scheme"], "fee")


class TestRunConfig(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.store = RunStore(Path(self._tmp.name) / "runs")
        self.data = synthetic_aligned(120, seed=4)
        t = self.data.timestamps
        self.periods = [SplitSpec(
            period=1, train_start=t[0], train_end=t[79], test_start=t[80], test_end=t[119],
        )]

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_trains_and_backtests(self) -> None:
        cfg = _cfg(batch_size=32)
        result = run_config(self.data, cfg, self.periods, self.store)
        self.assertEqual(result.status, "completed")
        self.assertEqual(len(result.test_reports), 1)
        self.assertEqual(result.test_reports[0]["strategy"], "ns")
        self.assertEqual(result.test_reports[0]["n_steps"], 39)
        self.assertTrue(Path(result.checkpoints["1"]).is_file())
        h = config_hash(cfg, self.periods, self.data)
        self.assertEqual(result.config_hash, h)
        self.assertTrue((self.store.run_dir(h, 0) / "loss_p1.csv").is_file())

    def test_hash_ignores_seed(self) -> None:
        self.assertEqual(
            config_hash(_cfg(seed=0), self.periods, self.data),
            config_hash(_cfg(seed=7), self.periods, self.data),
        )
        self.assertNotEqual(
            config_hash(_cfg(), self.periods, self.data),
            config_hash(_cfg(base_lr=1e-3), self.periods, self.data),
        )
        self.assertNotEqual(
            config_hash(_cfg(), self.periods, self.data),
            config_hash(_cfg(), self.periods, synthetic_aligned(120, seed=5)),
        )


class TestGrid(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.store = RunStore(Path(self._tmp.name))
        self.data = synthetic_aligned(60, seed=6)
        t = self.data.timestamps
        self.periods = [SplitSpec(period=1, train_start=t[0], train_end=t[39], test_start=t[40], test_end=t[59])]

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_expand_collapses_baseline(self) -> None:
        grid = GridConfig(
            variants=[LossVariant.BASELINE, LossVariant.L1], gammas=[0.1, 0.2], xis=[1e-5],
        )
        configs = expand_grid(grid, TrainConfig())
        self.assertEqual(len(configs), 3)
        self.assertEqual(configs[0].loss, LossConfig())
        self.assertEqual([c.loss.gamma for c in configs[1:]], [0.1, 0.2])
        self.assertEqual(len(expand_grid(grid.model_copy(update={"max_configs": 2}), TrainConfig())), 2)

    def test_expand_rejects_off_grid_values(self) -> None:
        with self.assertRaises(ConfigError):
            expand_grid(GridConfig(batch_sizes=[3]), TrainConfig())

    def test_summarize(self) -> None:
        configs = [_cfg(), _cfg(base_lr=1e-3)]
        runs = [
            RunResult(config_hash="a", seed=0, test_reports=[{"sharpe": 1.0}]),
            RunResult(config_hash="a", seed=1, test_reports=[{"sharpe": 3.0}]),
            RunResult(config_hash="b", seed=0, test_reports=[{"sharpe": 5.0}]),
            RunResult(config_hash="b", seed=1, status="failed"),
        ]
        rows = summarize(configs, ["a", "b"], runs)
        self.assertEqual([r.config_hash for r in rows], ["b", "a"])
        self.assertEqual(rows[1].mean_sharpe, 2.0)
        self.assertEqual(rows[1].std_sharpe, 1.0)
        self.assertEqual(rows[0].n_failed, 1)
        self.assertNotIn("seed", rows[0].params)

    def test_identical_runs_have_zero_std(self) -> None:
        runs = [RunResult(config_hash="a", seed=s, test_reports=[{"sharpe": 0.5}]) for s in range(5)]
        (row,) = summarize([_cfg()], ["a"], runs)
        self.assertEqual(row.std_sharpe, 0.0)
        self.assertEqual(row.n_runs, 5)

    def _fake_run(self, data, cfg, periods, store, cfg_hash=None):
        return RunResult(
            config_hash=cfg_hash, seed=cfg.seed,
            test_reports=[{"sharpe": float(cfg.seed) + cfg.base_lr}],
        )

    def test_grid_search_runs_every_seed(self) -> None:
        grid = GridConfig(learning_rates=[1e-3, 1e-4], seeds=[0, 1, 2])
        with patch("app.training.run_config", side_effect=self._fake_run) as fake:
            out = grid_search(self.data, grid, self.periods, self.store, max_workers=1)
        self.assertEqual(fake.call_count, 6)
        self.assertEqual(len(out.runs), 6)
        self.assertEqual(out.summary[0].params["base_lr"], 1e-3)
        self.assertAlmostEqual(out.summary[0].mean_sharpe, 1.0 + 1e-3)
        for run in out.runs:
            self.assertTrue(self.store.is_completed(run.config_hash, run.seed))

    def test_completed_runs_are_skipped(self) -> None:
        grid = GridConfig(seeds=[0, 1])
        with patch("app.training.run_config", side_effect=self._fake_run):
            grid_search(self.data, grid, self.periods, self.store, max_workers=1)
        with patch("app.training.run_config", side_effect=self._fake_run) as fake:
            out = grid_search(self.data, grid, self.periods, self.store, max_workers=1)
        fake.assert_not_called()
        self.assertEqual(out.summary[0].n_runs, 2)

    def test_failed_run_is_recorded(self) -> None:
        def flaky(data, cfg, periods, store, cfg_hash=None):
            if cfg.seed == 1:
                raise NumericalError("boom")
            return self._fake_run(data, cfg, periods, store, cfg_hash)

        with patch("app.training.run_config", side_effect=flaky):
            out = grid_search(self.data, GridConfig(seeds=[0, 1]), self.periods, self.store, max_workers=1)
        row = out.summary[0]
        self.assertEqual((row.n_runs, row.n_failed), (2, 1))
        failed = [r for r in out.runs if r.status == "failed"][0]
        self.assertIn("boom", failed.error)
        self.assertEqual(self.store.status(failed.config_hash, 1)["status"], "failed")

    def test_seed_errors(self) -> None:
        with self.assertRaises(SeedError):
            grid_search(self.data, GridConfig(seeds=[1, 1]), self.periods, self.store)
        with self.assertRaises(ConfigError):
            grid_search(self.data, GridConfig(seeds=[]), self.periods, self.store)


if __name__ == "__main__":
    unittest.main()
