"""Tests for app.report."""

from __future__ import annotations

import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from app.report import load_reports, report_table, write_summary
from app.schema import FeeScheme, StrategyKind
from app.utils import MissingCellError


def _rec(strategy: str, period: int, sharpe: float, seed=None, scheme: str = "none") -> dict:
    return {
        "strategy": strategy, "period": period, "fee_scheme": scheme,
        "sharpe": sharpe, "fapv": 1.0 + sharpe / 10, "mdd": 0.1, "n_steps": 10,
        "config_hash": "h", "seed": seed,
    }


def _grid() -> list[dict]:
    records = [_rec("ewp", p, 0.1 * p) for p in (1, 2)]
    # seed averages: 0 -> 1.0, 1 -> 3.0, 2 -> 2.0
    for seed, (a, b) in {0: (0.5, 1.5), 1: (2.0, 4.0), 2: (1.0, 3.0)}.items():
        records += [_rec("ns", 1, a, seed), _rec("ns", 2, b, seed)]
    return records


class TestReportTable(unittest.TestCase):
    def test_average_table(self) -> None:
        tables = report_table(_grid())
        rows = {r["strategy"]: r for r in tables.average}
        self.assertAlmostEqual(rows["NS"]["sharpe"], 2.0)
        self.assertAlmostEqual(rows["NS"]["sharpe_std"], (2.0 / 3.0) ** 0.5)
        self.assertEqual(rows["NS"]["n_seeds"], 3)
        self.assertAlmostEqual(rows["EWP"]["sharpe"], 0.15)
        self.assertIsNone(rows["EWP"]["sharpe_std"])

    def test_per_period_uses_median_seed(self) -> None:
        tables = report_table(_grid())
        ns = [r for r in tables.per_period if r["strategy"] == "NS"]
        self.assertEqual([r["seed"] for r in ns], [2, 2])
        self.assertEqual([r["sharpe"] for r in ns], [1.0, 3.0])

    def test_even_seed_count_takes_lower_median(self) -> None:
        records = [r for r in _grid() if r["seed"] != 1]
        ns = [r for r in report_table(records).per_period if r["strategy"] == "NS"]
        self.assertEqual(ns[0]["seed"], 0)

    def test_missing_cell(self) -> None:
        records = [r for r in _grid() if not (r["strategy"] == "ewp" and r["period"] == 2)]
        with self.assertRaises(MissingCellError):
            report_table(records)

    def test_seed_missing_a_period(self) -> None:
        records = [_rec("ewp", p, 0.1 * p) for p in (1, 2)]
        records += [_rec("ns", 1, 0.5, 0), _rec("ns", 1, 0.1, 1), _rec("ns", 2, 0.1, 1)]
        records += [_rec("ns", 1, 0.9, 2), _rec("ns", 2, 0.9, 2)]
        with self.assertRaises(MissingCellError) as ctx:
            report_table(records)
        self.assertIn("(0, 2)", str(ctx.exception))

    def test_explicit_axes(self) -> None:
        with self.assertRaises(MissingCellError):
            report_table(_grid(), schemes=[FeeScheme.NO_FEE, FeeScheme.FEE])
        tables = report_table(_grid(), strategies=[StrategyKind.EWP])
        self.assertEqual({r["strategy"] for r in tables.average}, {"EWP"})

    def test_text_rendering(self) -> None:
        text = report_table(_grid()).text
        self.assertIn("Average Sharpe over test periods (fees: none)", text)
        self.assertIn("2.000 +/- 0.816", text)


class TestFiles(unittest.TestCase):
    def test_write_and_load(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp)
            for i, rec in enumerate(_grid()):
                (out / f"report_{i}.json").write_text(json.dumps(rec))
            (out / "trail_0.json").write_text("{}")
            loaded = load_reports(out)
            self.assertEqual(len(loaded), len(_grid()))

            paths = write_summary(report_table(loaded), out)
            rows = pd.read_csv(paths["summary_csv"])
            self.assertEqual(list(rows.columns)[:4], ["table", "fee_scheme", "strategy", "period"])
            self.assertEqual(int((rows["table"] == "average").sum()), 2)
            self.assertEqual(int((rows["table"] == "period").sum()), 4)
            self.assertTrue(rows.loc[rows["table"] == "average", "period"].isna().all())
            summary = json.loads(Path(paths["summary_json"]).read_text())
            self.assertEqual(set(summary), {"average", "per_period"})
            self.assertTrue(Path(paths["summary_txt"]).read_text().startswith("Average Sharpe"))


if __name__ == "__main__":
    unittest.main()
