"""Seeded synthetic BTC / BTCUP / BTCDOWN candle generators.

``synthetic_pair`` drives BTC with a drifting Ornstein-Uhlenbeck log price
and derives the two tokens by compounding +/- ``leverage`` times the hourly
BTC return less a small tracking cost, so the tokens are negatively
correlated the way exchange leveraged tokens are.

``exact_linear_pair`` produces prices with ``y_u = alpha + beta * y_d``
exactly, for neutral-position tests.
"""

from __future__ import annotations

import logging
from datetime import datetime

import numpy as np

from .data import AlignedSeries, align
from .schema import Candle
from .utils import HOUR, RangeError, parse_utc

logger = logging.getLogger(__name__)

DEFAULT_START = parse_utc("2020-05-15T00:00:00Z")


def _candles(close: np.ndarray, start: datetime, rng: np.random.Generator) -> list[Candle]:
    """Wrap a close-price path into OHLCV candles (open = previous close)."""
    n = close.shape[0]
    opens = np.concatenate([[close[0]], close[:-1]])
    wick = np.abs(rng.normal(0.0, 0.002, size=(n, 2)))
    highs = np.maximum(opens, close) * (1.0 + wick[:, 0])
    lows = np.minimum(opens, close) * (1.0 - wick[:, 1])
    volumes = rng.lognormal(mean=8.0, sigma=0.5, size=n)
    return [
        Candle(
            open_time=start + i * HOUR,
            open=float(opens[i]),
            high=float(highs[i]),
            low=float(lows[i]),
            close=float(close[i]),
            volume=float(volumes[i]),
        )
        for i in range(n)
    ]


def synthetic_pair(
    n_hours: int,
    seed: int = 0,
    start: datetime = DEFAULT_START,
    btc0: float = 10_000.0,
    drift: float = 2e-5,
    theta: float = 0.05,
    sigma: float = 0.006,
    leverage: float = 3.0,
    tracking_cost: float = 2e-5,
) -> tuple[list[Candle], list[Candle], list[Candle]]:
    """Return ``(btc, btcup, btcdown)`` candles for ``n_hours`` hours."""

    if n_hours < 2:
        raise RangeError("n_hours must be at least 2")
    rng = np.random.default_rng(seed)

    dev = np.empty(n_hours)
    dev[0] = 0.0
    shocks = rng.normal(0.0, sigma, size=n_hours)
    for t in range(1, n_hours):
        dev[t] = (1.0 - theta) * dev[t - 1] + shocks[t]
    log_btc = np.log(btc0) + drift * np.arange(n_hours) + dev
    btc = np.exp(log_btc)

    r = btc[1:] / btc[:-1] - 1.0
    up_growth = np.maximum(1.0 + leverage * r - tracking_cost, 1e-3)
    down_growth = np.maximum(1.0 - leverage * r - tracking_cost, 1e-3)
    up = 10.0 * np.concatenate([[1.0], np.cumprod(up_growth)])
    down = 10.0 * np.concatenate([[1.0], np.cumprod(down_growth)])

    logger.debug("synthetic_pair: %d hours, seed=%d", n_hours, seed)
    return _candles(btc, start, rng), _candles(up, start, rng), _candles(down, start, rng)


def exact_linear_pair(
    n_hours: int,
    beta: float = -0.7,
    alpha: float = 3.0,
    seed: int = 0,
    start: datetime = DEFAULT_START,
) -> tuple[list[Candle], list[Candle], list[Candle]]:
    """Candles with BTCUP close exactly ``alpha + beta * BTCDOWN close``.

    BTCDOWN follows a random walk reflected into ``[0.5, 2.0]``; BTC is an
    unrelated geometric walk.
    """

    if beta >= 0:
        raise RangeError("beta must be negative")
    rng = np.random.default_rng(seed)
    down = np.empty(n_hours)
    down[0] = 1.0
    steps = rng.normal(0.0, 0.01, size=n_hours)
    for t in range(1, n_hours):
        x = down[t - 1] + steps[t]
        if x < 0.5:
            x = 1.0 - x
        elif x > 2.0:
            x = 4.0 - x
        down[t] = x
    up = alpha + beta * down
    if np.any(up <= 0):
        raise RangeError("alpha too small: BTCUP price would be non-positive")
    btc = 10_000.0 * np.exp(np.cumsum(rng.normal(0.0, 0.005, size=n_hours)))
    return _candles(btc, start, rng), _candles(up, start, rng), _candles(down, start, rng)


def synthetic_aligned(n_hours: int, seed: int = 0, **kwargs) -> AlignedSeries:
    """``synthetic_pair`` already aligned on its hourly grid."""
    btc, up, down = synthetic_pair(n_hours, seed=seed, **kwargs)
    return align(btc, up, down)
