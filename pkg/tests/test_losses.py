"""Tests for app.losses."""

from __future__ import annotations

import unittest

import numpy as np

from app.losses import (
    TrajectoryBatch,
    a1,
    a2,
    beta_model,
    hl1,
    hl1_from_beta,
    hl2,
    hl2_from_beta,
    loss_baseline,
    loss_combined,
    margin_terms,
    segment_sharpe,
)
from app.neutral import neutral_weights
from app.nn import autodiff as ad
from app.schema import LossConfig, LossVariant
from app.utils import DivisionGuardError, LengthError, ZeroVolatilityError


def _batch(seed: int = 0, B: int = 4, T: int = 16) -> TrajectoryBatch:
    rng = np.random.default_rng(seed)
    w_u = rng.uniform(0.05, 0.95, size=(B, T))
    return TrajectoryBatch(
        weights_u=w_u,
        weights_d=1.0 - w_u,
        prices_u=rng.uniform(5, 15, size=(B, T)),
        prices_d=rng.uniform(5, 15, size=(B, T)),
        volumes_u=rng.uniform(0.01, 0.2, size=(B, T)),
        beta_market=-rng.uniform(0.5, 1.5, size=(B, T)),
        returns=rng.normal(0.0005, 0.01, size=(B, T)),
    )


class TestBaseline(unittest.TestCase):
    def test_hand_values(self) -> None:
        self.assertAlmostEqual(float(loss_baseline(np.array([0.01, 0.02, 0.03]))), -2.0, places=12)
        self.assertAlmostEqual(float(loss_baseline(np.array([0.01, -0.01]))), 0.0, places=15)

    def test_constant_returns(self) -> None:
        with self.assertRaises(ZeroVolatilityError):
            loss_baseline(np.array([0.05, 0.05, 0.05]))

    def test_too_short(self) -> None:
        with self.assertRaises(LengthError):
            segment_sharpe(np.array([0.1]))

    def test_batch_mean_of_segment_sharpes(self) -> None:
        batch = _batch()
        r = batch.returns
        expected = -np.mean(r.mean(axis=1) / r.std(axis=1, ddof=1))
        self.assertAlmostEqual(float(loss_baseline(batch)), expected, places=12)
        self.assertEqual(batch.shape, (4, 16))


class TestBetaModel(unittest.TestCase):
    def test_hand_value(self) -> None:
        self.assertAlmostEqual(beta_model((0.5, 0.5), (1.0, 2.0)), -0.5)

    def test_inverts_neutral_weights(self) -> None:
        w = neutral_weights(-0.83, 7.0, 3.0)
        self.assertAlmostEqual(beta_model(w.as_tuple(), (7.0, 3.0)), -0.83, places=12)

    def test_guard(self) -> None:
        with self.assertRaises(DivisionGuardError):
            beta_model((1e-13, 1.0 - 1e-13), (1.0, 1.0))


class TestMargins(unittest.TestCase):
    def test_inside(self) -> None:
        c1, c2 = margin_terms(-1.0, -1.0, 0.1)
        self.assertAlmostEqual(c1, 0.1)
        self.assertAlmostEqual(c2, 0.1)

    def test_degenerate_margin(self) -> None:
        self.assertEqual(margin_terms(-0.7, -0.7, 0.0), (0.0, 0.0))

    def test_outside(self) -> None:
        c1, c2 = margin_terms(-1.5, -1.0, 0.1)
        self.assertAlmostEqual(c1, -0.4)
        self.assertAlmostEqual(c2, 0.6)


class TestPenalties(unittest.TestCase):
    def test_hand_values(self) -> None:
        self.assertAlmostEqual(hl1_from_beta(-1.5, -1.0, 2.0, 0.1), 0.96, places=12)
        self.assertAlmostEqual(hl2_from_beta(-1.5, -1.0, 2.0, 0.1), 0.64, places=12)

    def test_zero_inside_and_at_degenerate_boundary(self) -> None:
        self.assertEqual(hl1_from_beta(-1.0, -1.0, 2.0, 0.1), 0.0)
        self.assertEqual(hl2_from_beta(-1.0, -1.0, 2.0, 0.1), 0.0)
        self.assertEqual(hl1_from_beta(-0.7, -0.7, 3.0, 0.0), 0.0)

    def test_unscaled_terms(self) -> None:
        c1, c2 = margin_terms(-1.5, -1.0, 0.1)
        self.assertAlmostEqual(a1(c1, c2), 0.24, places=12)
        self.assertAlmostEqual(a2(c1, c2), 0.16, places=12)

    def test_from_weights(self) -> None:
        w, y = (0.5, 0.5), (1.0, 2.0)
        self.assertAlmostEqual(hl1(w, y, 2.0, -0.5, 0.1), 0.0)
        self.assertGreater(hl2(w, y, 2.0, -1.0, 0.1), 0.0)

    def test_fuzz_region(self) -> None:
        rng = np.random.default_rng(12345)
        n = 100_000
        beta = -rng.uniform(0.01, 3.0, n)
        gamma = rng.uniform(0.0, 1.0, n)
        b_model = rng.uniform(-8.0, 2.0, n)
        v_u = rng.uniform(0.01, 5.0, n)
        inside = ((1 + gamma) * beta <= b_model) & (b_model <= (1 - gamma) * beta)

        c1, c2 = margin_terms(b_model, beta, gamma)
        self.assertFalse(np.any((c1 < 0) & (c2 < 0)))

        h1 = hl1_from_beta(b_model, beta, v_u, gamma)
        h2 = hl2_from_beta(b_model, beta, v_u, gamma)
        self.assertTrue(np.all(h1[inside] == 0.0))
        self.assertTrue(np.all(h2[inside] == 0.0))
        self.assertTrue(np.all(h1[~inside] > 0.0))
        self.assertTrue(np.all(h2[~inside] > 0.0))
        self.assertGreater(inside.sum(), 1000)

    def test_volume_scaling(self) -> None:
        for fn in (hl1_from_beta, hl2_from_beta):
            base = fn(-1.7, -1.0, 0.3, 0.2)
            self.assertAlmostEqual(fn(-1.7, -1.0, 0.3 * 2.5, 0.2), base * 2.5 ** 2, places=12)


class TestCombined(unittest.TestCase):
    def test_xi_zero_equals_baseline(self) -> None:
        batch = _batch(1)
        cfg = LossConfig(variant=LossVariant.L1, gamma=0.2, xi=0.0)
        self.assertEqual(float(loss_combined(batch, cfg)), float(loss_baseline(batch)))

    def test_neutral_weights_have_no_penalty(self) -> None:
        batch = _batch(2)
        w_u = 1.0 / (1.0 - batch.beta_market * batch.prices_d / batch.prices_u)
        batch.weights_u, batch.weights_d = w_u, 1.0 - w_u
        for variant in (LossVariant.L1, LossVariant.L2):
            cfg = LossConfig(variant=variant, gamma=0.2, xi=1e-4)
            self.assertAlmostEqual(float(loss_combined(batch, cfg)), float(loss_baseline(batch)), places=12)

    def test_matches_straight_loop(self) -> None:
        batch = _batch(3)
        gamma, xi = 0.2, 1e-4
        B, T = batch.shape
        for variant in (LossVariant.L1, LossVariant.L2):
            total_sr, total_hl = 0.0, 0.0
            for b in range(B):
                r = batch.returns[b]
                total_sr += r.mean() / r.std(ddof=1)
                for t in range(T):
                    bm = -(batch.prices_u[b, t] * batch.weights_d[b, t]) / (batch.prices_d[b, t] * batch.weights_u[b, t])
                    lo, hi = (1 + gamma) * batch.beta_market[b, t], (1 - gamma) * batch.beta_market[b, t]
                    c1, c2 = bm - lo, hi - bm
                    v = batch.volumes_u[b, t]
                    if variant is LossVariant.L1:
                        total_hl += max(0.0, -v * v * c1 * c2)
                    else:
                        total_hl += max(0.0, -v * c1) ** 2 + max(0.0, -v * c2) ** 2
            expected = -total_sr / B + xi * total_hl / (B * T)
            got = float(loss_combined(batch, LossConfig(variant=variant, gamma=gamma, xi=xi)))
            self.assertAlmostEqual(got, expected, places=12)

    def test_gradient_flows_to_weights(self) -> None:
        batch = _batch(4, B=2, T=6)
        tape = ad.Tape()
        w_u = tape.var(batch.weights_u)
        returns = tape.var(batch.returns)
        batch.weights_u, batch.weights_d, batch.returns = w_u, 1.0 - w_u, returns
        loss = loss_combined(batch, LossConfig(variant=LossVariant.L2, gamma=0.0, xi=1.0))
        g_w, g_r = tape.backward(loss, wrt=[w_u, returns])
        self.assertEqual(g_w.shape, (2, 6))
        self.assertTrue(np.any(g_w != 0.0))
        self.assertTrue(np.any(g_r != 0.0))


if __name__ == "__main__":
    unittest.main()
