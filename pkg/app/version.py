"""Tool version and source commit, stamped into every run manifest."""

from __future__ import annotations

import logging
import os
import subprocess
from functools import lru_cache
from importlib import metadata
from pathlib import Path

logger = logging.getLogger(__name__)

DIST_NAME = "levpair-allocator"
SOURCE_ROOT = Path(__file__).resolve().parent.parent


def get_version() -> str:
    try:
        return metadata.version(DIST_NAME)
    except metadata.PackageNotFoundError:
        return "0.0.0+local"


def _git(*args: str) -> str:
    return subprocess.check_output(
        ["git", *args], stderr=subprocess.DEVNULL, cwd=SOURCE_ROOT,
    ).decode().strip()


@lru_cache(maxsize=1)
def get_commit() -> str:
    """Short commit of the source tree, suffixed ``-dirty`` when tracked files are modified.

    ``LEVPAIR_COMMIT`` takes precedence, for installs without a checkout.
    """
    override = os.getenv("LEVPAIR_COMMIT", "").strip()
    if override:
        return override
    try:
        head = _git("rev-parse", "--short=12", "HEAD")
        dirty = bool(_git("status", "--porcelain", "--untracked-files=no"))
    except (OSError, subprocess.CalledProcessError):
        logger.debug("No git checkout at %s; manifest commit is 'unknown'", SOURCE_ROOT)
        return "unknown"
    return f"{head}-dirty" if dirty else head
