"""Bounded worker pool for grid and backtest jobs.

Jobs share read-only inputs; each job owns its outputs. Results come back in
submission order so downstream tables are deterministic.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from .config import MAX_WORKERS

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_jobs(fn: Callable[[T], R], jobs: Iterable[T], max_workers: int | None = None) -> list[R]:
    """Apply *fn* to every job on at most *max_workers* threads."""
    items = list(jobs)
    workers = max(1, min(max_workers or MAX_WORKERS, len(items) or 1))
    if workers == 1:
        return [fn(job) for job in items]
    logger.info("Running %d job(s) on %d worker(s)", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
