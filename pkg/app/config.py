"""Centralized runtime settings and experiment-config loading.

All env-driven settings live here so there is a single source of truth.
Experiment settings come from one TOML file validated by
``app.schema.ExperimentConfig``; CLI flags override individual keys.
"""

from __future__ import annotations

import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .schema import ExperimentConfig
from .utils import ConfigError


def _env_bool(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes")


def _env_int(name: str, default: int, lo: int = 1, hi: int = 10_000) -> int:
    try:
        return max(lo, min(hi, int(os.environ.get(name, str(default)))))
    except (TypeError, ValueError):
        return default


# ---------------------------------------------------------------------------
# Directories
# ---------------------------------------------------------------------------
DATA_DIR: str = os.environ.get("LEVPAIR_DATA_DIR", os.path.join(os.getcwd(), "data"))
RUNS_DIR: str = os.environ.get("LEVPAIR_RUNS_DIR", os.path.join(os.getcwd(), "runs"))

# ---------------------------------------------------------------------------
# Worker pool
# ---------------------------------------------------------------------------
MAX_WORKERS: int = _env_int("LEVPAIR_MAX_WORKERS", default=2, lo=1, hi=32)

# ---------------------------------------------------------------------------
# Klines endpoint
# ---------------------------------------------------------------------------
KLINES_URL: str = os.environ.get(
    "LEVPAIR_KLINES_URL", "https://api.binance.com/api/v3/klines",
)
KLINES_PAGE_LIMIT: int = _env_int("LEVPAIR_KLINES_PAGE_LIMIT", default=1000, hi=1000)
HTTP_TIMEOUT: int = _env_int("LEVPAIR_HTTP_TIMEOUT", default=10, hi=300)
HTTP_RETRIES: int = _env_int("LEVPAIR_HTTP_RETRIES", default=5, hi=20)

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
LOG_LEVEL: str = os.environ.get("LEVPAIR_LOG_LEVEL", "INFO").strip().upper()
STRICT_AUDIT: bool = _env_bool("LEVPAIR_STRICT_AUDIT")


def load_experiment_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Read a TOML experiment file, apply dotted-key *overrides*, validate.

    ``overrides`` maps dotted keys (``"train.loss.gamma"``) to values; ``None``
    values are ignored so argparse defaults can be passed through untouched.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"Config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"Invalid TOML in {path}: {exc}") from exc

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def log_startup_config() -> None:
    """Print one startup line summarising active configuration."""
    msg = (
        f"levpair config: DATA_DIR={DATA_DIR} RUNS_DIR={RUNS_DIR} "
        f"MAX_WORKERS={MAX_WORKERS} KLINES_URL={KLINES_URL} "
        f"KLINES_PAGE_LIMIT={KLINES_PAGE_LIMIT} HTTP_TIMEOUT={HTTP_TIMEOUT} "
        f"HTTP_RETRIES={HTTP_RETRIES} LOG_LEVEL={LOG_LEVEL} "
        f"STRICT_AUDIT={STRICT_AUDIT}"
    )
    print(msg, flush=True)
    sys.stderr.write(msg + "\n")
    sys.stderr.flush()
