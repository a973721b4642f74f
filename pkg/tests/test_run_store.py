"""Tests for app.run_store."""

from __future__ import annotations

import json
import tempfile
import unittest
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from app.run_store import RunStore, write_manifest
from app.schema import RunResult


class TestRunStore(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.store = RunStore(Path(self._tmp.name) / "runs")

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_unknown_run(self) -> None:
        self.assertIsNone(self.store.status("abc", 0))
        self.assertIsNone(self.store.load_result("abc", 0))
        self.assertFalse(self.store.is_completed("abc", 0))

    def test_lifecycle_to_completed(self) -> None:
        self.store.set_pending("abc", 1)
        self.assertEqual(self.store.status("abc", 1)["status"], "pending")
        created = self.store.status("abc", 1)["created_at"]

        self.store.set_processing("abc", 1)
        self.assertEqual(self.store.status("abc", 1)["status"], "processing")

        result = RunResult(config_hash="abc", seed=1, test_reports=[{"sharpe": 0.5}])
        self.store.set_completed(result)
        status = self.store.status("abc", 1)
        self.assertEqual(status["status"], "completed")
        self.assertEqual(status["created_at"], created)
        self.assertTrue(self.store.is_completed("abc", 1))
        self.assertEqual(self.store.load_result("abc", 1), result)
        metrics = json.loads((self.store.run_dir("abc", 1) / "metrics.json").read_text())
        self.assertEqual(metrics, [{"sharpe": 0.5}])

    def test_lifecycle_to_failed(self) -> None:
        self.store.set_processing("abc", 2)
        self.store.set_failed("abc", 2, "DivergenceError: nan")
        status = self.store.status("abc", 2)
        self.assertEqual(status["status"], "failed")
        self.assertEqual(status["error"], "DivergenceError: nan")
        self.assertFalse(self.store.is_completed("abc", 2))

    def test_corrupt_status_is_new(self) -> None:
        path = self.store.run_dir("abc", 0) / "status.json"
        path.parent.mkdir(parents=True)
        path.write_text("{not json")
        with self.assertLogs("app.run_store", level="WARNING"):
            self.assertIsNone(self.store.status("abc", 0))

    def test_list_runs(self) -> None:
        self.store.set_pending("a", 0)
        self.store.set_failed("b", 0, "x")
        self.store.set_completed(RunResult(config_hash="c", seed=3))
        self.assertEqual(len(self.store.list_runs()), 3)
        self.assertEqual([r["config_hash"] for r in self.store.list_runs("failed")], ["b"])

    def test_paths(self) -> None:
        self.assertEqual(self.store.checkpoint_path("h", 4, 2).name, "checkpoint_p2.lpck")
        self.assertEqual(self.store.checkpoint_path("h", 4, 2).parent, self.store.run_dir("h", 4))

    def test_losses_csv(self) -> None:
        path = self.store.write_losses("h", 0, 1, [0.5, 0.25])
        self.assertEqual(path.read_text().splitlines(), ["epoch,loss", "1,0.5", "2,0.25"])
        frame = pd.read_csv(path)
        self.assertEqual(frame["loss"].tolist(), [0.5, 0.25])


class TestManifest(unittest.TestCase):
    def test_write_manifest(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            started = datetime(2021, 7, 4, tzinfo=timezone.utc)
            path = write_manifest(
                Path(tmp) / "out", "backtest", "deadbeef", started,
                artifacts={"summary_txt": "out/summary.txt"},
                effective_config={"train": {"seed": 0}},
                config_path="exp.toml",
            )
            data = json.loads(path.read_text())
        self.assertEqual(data["command"], "backtest")
        self.assertEqual(data["config_hash"], "deadbeef")
        self.assertEqual(data["config_path"], "exp.toml")
        self.assertEqual(data["artifacts"], {"summary_txt": "out/summary.txt"})
        self.assertIn("tool_version", data)
        self.assertIn("commit", data)
        self.assertIsNotNone(data["finished_at"])


if __name__ == "__main__":
    unittest.main()
