"""On-disk store for training runs, one directory per (config hash, seed).

Thread-safe. Each run goes through: pending -> processing -> completed | failed.
Every state change is written to ``status.json`` so an interrupted grid can
be resumed: completed runs whose hash matches are skipped.

Layout::

    <root>/<config-hash>/<seed>/status.json
                                result.json      RunResult
                                metrics.json     per-period test reports
                                loss_p<k>.csv    per-epoch training loss
                                checkpoint_p<k>.lpck
"""

from __future__ import annotations

import json
import logging
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

import pandas as pd

from .schema import RunManifest, RunResult
from .version import get_commit, get_version

logger = logging.getLogger(__name__)

RunStatus = Literal["pending", "processing", "completed", "failed"]


class RunStore:
    """Run directories under *root* with a persisted status lifecycle."""

    def __init__(self, root: str | Path) -> None:
        self._lock = threading.Lock()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------
    # Paths
    # ------------------------------------------------------------------
    def run_dir(self, config_hash: str, seed: int) -> Path:
        return self.root / config_hash / str(seed)

    def checkpoint_path(self, config_hash: str, seed: int, period: int) -> Path:
        return self.run_dir(config_hash, seed) / f"checkpoint_p{period}.lpck"

    # ------------------------------------------------------------------
    # Status lifecycle
    # ------------------------------------------------------------------
    def status(self, config_hash: str, seed: int) -> dict | None:
        path = self.run_dir(config_hash, seed) / "status.json"
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except ValueError:
            logger.warning("Corrupt status file %s; treating run as new", path)
            return None

    def is_completed(self, config_hash: str, seed: int) -> bool:
        st = self.status(config_hash, seed)
        return bool(st and st.get("status") == "completed" and st.get("config_hash") == config_hash)

    def set_pending(self, config_hash: str, seed: int) -> None:
        self._write_status(config_hash, seed, "pending")

    def set_processing(self, config_hash: str, seed: int) -> None:
        self._write_status(config_hash, seed, "processing")

    def set_completed(self, result: RunResult) -> None:
        directory = self.run_dir(result.config_hash, result.seed)
        with self._lock:
            directory.mkdir(parents=True, exist_ok=True)
            (directory / "result.json").write_text(result.model_dump_json(indent=2))
            (directory / "metrics.json").write_text(
                json.dumps(result.test_reports, indent=2, sort_keys=True)
            )
        self._write_status(result.config_hash, result.seed, "completed")

    def set_failed(self, config_hash: str, seed: int, error: str) -> None:
        self._write_status(config_hash, seed, "failed", error=error)

    def load_result(self, config_hash: str, seed: int) -> RunResult | None:
        path = self.run_dir(config_hash, seed) / "result.json"
        if not path.exists():
            return None
        return RunResult.model_validate_json(path.read_text())

    def list_runs(self, status_filter: str | None = None) -> list[dict]:
        runs: list[dict] = []
        for path in sorted(self.root.glob("*/*/status.json")):
            try:
                data = json.loads(path.read_text())
            except ValueError:
                continue
            if status_filter and data.get("status") != status_filter:
                continue
            runs.append(data)
        return runs

    # ------------------------------------------------------------------
    # Artifacts
    # ------------------------------------------------------------------
    def write_losses(self, config_hash: str, seed: int, period: int, losses: list[float]) -> Path:
        path = self.run_dir(config_hash, seed) / f"loss_p{period}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({"epoch": range(1, len(losses) + 1), "loss": [float(x) for x in losses]})
        frame.to_csv(path, index=False)
        return path

    # ------------------------------------------------------------------
    # Internal
    # ------------------------------------------------------------------
    def _write_status(self, config_hash: str, seed: int, status: RunStatus, error: str | None = None) -> None:
        directory = self.run_dir(config_hash, seed)
        with self._lock:
            directory.mkdir(parents=True, exist_ok=True)
            path = directory / "status.json"
            now = time.time()
            created = now
            if path.exists():
                try:
                    created = float(json.loads(path.read_text()).get("created_at", now))
                except ValueError:
                    pass
            data = {
                "config_hash": config_hash,
                "seed": seed,
                "status": status,
                "error": error,
                "created_at": created,
                "updated_at": now,
            }
            path.write_text(json.dumps(data, indent=2))


def write_manifest(
    directory: str | Path,
    command: str,
    config_hash: str,
    started_at: datetime,
    artifacts: dict[str, str],
    effective_config: dict,
    config_path: str | None = None,
) -> Path:
    """Write ``manifest.json`` describing how *directory*'s artifacts were produced."""
    manifest = RunManifest(
        command=command,
        config_path=config_path,
        config_hash=config_hash,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc),
        artifacts=artifacts,
        tool_version=get_version(),
        commit=get_commit(),
        effective_config=effective_config,
    )
    path = Path(directory) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    return path
