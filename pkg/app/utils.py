"""Errors and small shared helpers (time grid, hashing)."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

HOUR = timedelta(hours=1)
HOUR_FREQ = "h"


class LevPairError(Exception):
    """Base exception for all domain errors."""


# ---------------------------------------------------------------------------
# Data errors
# ---------------------------------------------------------------------------
class DataError(LevPairError):
    """Raised for malformed, inconsistent or insufficient market data."""


class ParseError(DataError):
    """Raised when a CSV row cannot be parsed."""


class OrderError(DataError):
    """Raised when timestamps are not strictly increasing."""


class RangeError(DataError):
    """Raised when a value or date range is outside its valid domain."""


class GapError(DataError):
    """Raised when hours are missing from a series that must be contiguous."""

    def __init__(self, message: str, missing: list[datetime] | None = None) -> None:
        super().__init__(message)
        self.missing = missing or []


class LengthError(DataError):
    """Raised when a series is too short for the requested operation."""


class InsufficientHistoryError(DataError):
    """Raised when not enough history precedes a decision point."""


class EmptyRangeError(DataError):
    """Raised when a requested time range contains no hours."""


class NetworkError(DataError):
    """Raised when the klines endpoint cannot be reached."""


class RateLimitError(NetworkError):
    """Raised when the endpoint keeps rate limiting after all retries."""


# ---------------------------------------------------------------------------
# Numerical errors
# ---------------------------------------------------------------------------
class NumericalError(LevPairError):
    """Base for numerical failures."""


class DegenerateError(NumericalError):
    """Raised when a closed form has a non-positive denominator."""


class NonConvergenceError(NumericalError):
    """Raised when an iterative solver does not converge."""


class ZeroVolatilityError(NumericalError):
    """Raised when a return series has (numerically) zero standard deviation."""


class DegenerateRegressorError(NumericalError):
    """Raised when the OLS regressor has zero variance."""


class NeutralInfeasibleError(NumericalError):
    """Raised when no long-only neutral allocation exists (beta >= 0)."""


class DivisionGuardError(NumericalError):
    """Raised when a weight used as a divisor underflows."""


class DegenerateCovarianceError(NumericalError):
    """Raised when the 2-asset minimum-variance denominator vanishes."""


class ShapeError(NumericalError):
    """Raised on tensor shape mismatches."""


class DivergenceError(NumericalError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


# ---------------------------------------------------------------------------
# Config / artifact errors
# ---------------------------------------------------------------------------
class ConfigError(LevPairError):
    """Raised when configuration is invalid."""


class SeedError(ConfigError):
    """Raised when repeated runs of one configuration share a seed."""


class UnknownSymbolError(ConfigError):
    """Raised when the exchange does not know a symbol."""


class MissingCellError(LevPairError):
    """Raised when a report grid lacks a (strategy, period, scheme) cell."""


class CheckpointError(LevPairError):
    """Raised when a checkpoint file is missing or corrupt."""


class AuditError(LevPairError):
    """Raised when a report fails its accounting audit (strict mode only)."""


# ---------------------------------------------------------------------------
# Time helpers
# ---------------------------------------------------------------------------
def parse_utc(value: str | datetime) -> datetime:
    """Parse an ISO-8601 timestamp (``Z`` suffix allowed) into aware UTC."""

    if isinstance(value, datetime):
        dt = value
    else:
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def to_millis(dt: datetime) -> int:
    return int(parse_utc(dt).timestamp() * 1000)


def from_millis(ms: int) -> datetime:
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc)


def count_hour_crossings(prev: datetime, new: datetime, hour: int = 0) -> int:
    """Number of instants at ``hour``:00 UTC in the interval ``(prev, new]``."""

    if new <= prev:
        return 0
    first = prev.replace(hour=hour, minute=0, second=0, microsecond=0)
    if first <= prev:
        first += timedelta(days=1)
    if first > new:
        return 0
    return 1 + int((new - first) // timedelta(days=1))


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------
def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(64 * 1024), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_hash(payload: Any, extra: list[str] | None = None, length: int = 12) -> str:
    """Short SHA-256 over the canonical JSON of *payload* plus optional digests."""

    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode())
    for item in extra or []:
        digest.update(item.encode())
    return digest.hexdigest()[:length]
