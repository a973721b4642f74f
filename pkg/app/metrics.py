"""Per-period performance measures: Sharpe ratio, fAPV and maximum drawdown."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .schema import MetricsRow
from .utils import LengthError, RangeError, ZeroVolatilityError

MIN_STD = 1e-15


def sharpe(returns: Sequence[float]) -> float:
    """Mean over sample standard deviation (ddof=1); no risk-free rate, not annualized."""
    r = np.asarray(returns, dtype=np.float64)
    if r.shape[0] < 2:
        raise LengthError("sharpe needs at least two returns")
    sd = float(r.std(ddof=1))
    if sd < MIN_STD:
        raise ZeroVolatilityError(f"return std {sd:.3g} is zero")
    return float(r.mean()) / sd


def fapv(returns: Sequence[float]) -> float:
    r = np.asarray(returns, dtype=np.float64)
    return float(np.prod(1.0 + r))


def mdd(values: Sequence[float]) -> float:
    """Largest peak-to-trough fractional decline of the value curve."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise LengthError("mdd needs a non-empty value curve")
    if np.any(v <= 0):
        raise RangeError("portfolio values must be positive")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def metrics_row(returns: Sequence[float], values: Sequence[float]) -> MetricsRow:
    return MetricsRow(sharpe=sharpe(returns), fapv=fapv(returns), mdd=mdd(values))
