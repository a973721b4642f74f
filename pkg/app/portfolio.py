"""Two-asset portfolio accounting with trading and management fees.

A period close runs: price move (volumes fixed, weights drift) ->
reallocation to the target weights, shrinking the value by ``mu`` to pay
the trading fee -> management fee for every charging hour crossed.

``shrinkage_terms`` is plain arithmetic so it also evaluates on autodiff
``Var`` operands; the training simulation uses it to keep the fee inside the
computational graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Sequence

import numpy as np

from .schema import FeeSchedule
from .utils import HOUR, DegenerateError, NonConvergenceError, RangeError, count_hour_crossings

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9
ORACLE_TOL = 1e-14
ORACLE_MAX_ITER = 10_000


def _pair(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (2,):
        raise RangeError(f"{name} must have exactly two entries")
    return arr


def _check_weights(w: np.ndarray, name: str = "weights") -> None:
    if np.any(w < -WEIGHT_TOL) or abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
        raise RangeError(f"{name} {w.tolist()} violate long-only/budget constraints")


@dataclass(frozen=True)
class PortfolioState:
    """Holdings after a reallocation: ``value = prices . volumes``."""

    weights: np.ndarray
    value: float
    prices: np.ndarray
    volumes: np.ndarray
    time: datetime

    @classmethod
    def open(
        cls,
        weights: Sequence[float],
        prices: Sequence[float],
        time: datetime,
        value: float = 1.0,
    ) -> "PortfolioState":
        w = _pair(weights, "weights")
        _check_weights(w)
        y = _pair(prices, "prices")
        if np.any(y <= 0):
            raise RangeError("prices must be positive")
        return cls(weights=w, value=float(value), prices=y, volumes=value * w / y, time=time)


@dataclass(frozen=True)
class IntermediateState:
    """Portfolio after the price move and before reallocation."""

    value_prime: float
    weights_prime: np.ndarray
    volumes: np.ndarray


def apply_price_move(state: PortfolioState, new_prices: Sequence[float]) -> IntermediateState:
    y = _pair(new_prices, "new_prices")
    if np.any(y <= 0):
        raise RangeError("new_prices must be positive")
    holdings = y * state.volumes
    value_prime = float(holdings.sum())
    return IntermediateState(
        value_prime=value_prime,
        weights_prime=holdings / value_prime,
        volumes=state.volumes.copy(),
    )


# ---------------------------------------------------------------------------
# Trading-fee shrinkage
# ---------------------------------------------------------------------------


def shrinkage_terms(wp_a: Any, wp_b: Any, w_a: Any, w_b: Any, c: float) -> tuple[Any, Any]:
    """Closed-form ``mu`` assuming asset A is sold, and assuming B is sold.

    Operands may be floats, arrays or autodiff values; the caller picks the
    branch with ``wp_a > w_a``.
    """
    keep = 1.0 - c
    sell_a = (keep + (wp_b - wp_a * keep) * c) / (keep + (w_b - w_a * keep) * c)
    sell_b = (keep + (wp_a - wp_b * keep) * c) / (keep + (w_a - w_b * keep) * c)
    return sell_a, sell_b


def shrinkage(w_prime: Sequence[float], w_target: Sequence[float], c: float) -> float:
    """Fraction ``mu`` of the pre-trade value left after reallocating to *w_target*."""
    wp = _pair(w_prime, "w_prime")
    w = _pair(w_target, "w_target")
    _check_weights(wp, "w_prime")
    _check_weights(w, "w_target")
    if c == 0.0 or np.array_equal(wp, w):
        return 1.0

    sold_a = wp[0] > w[0]
    a, b = (0, 1) if sold_a else (1, 0)
    keep = 1.0 - c
    denom = keep + c * (w[b] - w[a] * keep)
    if denom <= 0.0:
        raise DegenerateError(f"shrinkage denominator {denom} <= 0")
    mu = (keep + c * (wp[b] - wp[a] * keep)) / denom
    return float(min(mu, 1.0))


def shrinkage_iterative_oracle(
    w_prime: Sequence[float], w_target: Sequence[float], c: float,
) -> float:
    """Solve the cost balance for ``mu`` by fixed-point iteration (any number of assets).

    ``1 - mu = c * sum((w' - mu w)+) + c / (1 - c) * sum((mu w - w')+)``.
    The map is a contraction with constant ``c / (1 - c)``.
    """
    wp = np.asarray(w_prime, dtype=np.float64)
    w = np.asarray(w_target, dtype=np.float64)
    if wp.shape != w.shape:
        raise RangeError("weight vectors differ in length")
    if c == 0.0:
        return 1.0

    buy_rate = c / (1.0 - c)
    mu = 1.0
    for _ in range(ORACLE_MAX_ITER):
        sold = np.maximum(wp - mu * w, 0.0).sum()
        bought = np.maximum(mu * w - wp, 0.0).sum()
        nxt = 1.0 - c * sold - buy_rate * bought
        if abs(nxt - mu) < ORACLE_TOL:
            return float(nxt)
        mu = nxt
    raise NonConvergenceError(f"shrinkage oracle did not converge in {ORACLE_MAX_ITER} iterations")


# ---------------------------------------------------------------------------
# Management fee and period close
# ---------------------------------------------------------------------------


def management_multiplier(prev_time: datetime, new_time: datetime, schedule: FeeSchedule) -> float:
    if schedule.m == 0.0:
        return 1.0
    k = count_hour_crossings(prev_time, new_time, schedule.management_hour)
    return (1.0 - schedule.m) ** k


def apply_management_fee(
    value: float, prev_time: datetime, new_time: datetime, schedule: FeeSchedule,
) -> float:
    return value * management_multiplier(prev_time, new_time, schedule)


def reallocate(
    state: PortfolioState,
    w_target: Sequence[float],
    new_prices: Sequence[float],
    schedule: FeeSchedule,
    new_time: datetime | None = None,
) -> tuple[PortfolioState, float]:
    """Close one period: move prices, trade into *w_target*, charge fees.

    Returns the new state and the period return ``p_t / p_{t-1} - 1``.
    """
    w = _pair(w_target, "w_target")
    _check_weights(w, "w_target")
    when = new_time if new_time is not None else state.time + HOUR

    moved = apply_price_move(state, new_prices)
    mu = shrinkage(moved.weights_prime, w, schedule.c)
    value = apply_management_fee(mu * moved.value_prime, state.time, when, schedule)

    y = _pair(new_prices, "new_prices")
    new_state = PortfolioState(
        weights=w, value=value, prices=y, volumes=value * w / y, time=when,
    )
    return new_state, value / state.value - 1.0
