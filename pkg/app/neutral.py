"""Market beta of BTCUP on BTCDOWN prices and the neutral allocation it implies."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .utils import DegenerateRegressorError, LengthError, NeutralInfeasibleError, RangeError

logger = logging.getLogger(__name__)

MIN_REGRESSOR_VAR = 1e-15


@dataclass(frozen=True)
class BetaEstimate:
    beta_hat: float
    alpha_hat: float
    window: int
    anchor_time: datetime | None = None
    stderr: float = float("nan")


@dataclass(frozen=True)
class NeutralWeights:
    w_u: float
    w_d: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.w_u, self.w_d)


def estimate_beta(
    prices_u: Sequence[float],
    prices_d: Sequence[float],
    K: int,
    anchor_time: datetime | None = None,
) -> BetaEstimate:
    """OLS of ``y_u`` on ``y_d`` over the last *K* samples (two-pass centered moments)."""
    yu = np.asarray(prices_u, dtype=np.float64)
    yd = np.asarray(prices_d, dtype=np.float64)
    if yu.shape != yd.shape:
        raise LengthError("price arrays differ in length")
    if K < 2 or yu.shape[0] < K:
        raise LengthError(f"need at least K={K} >= 2 samples, have {yu.shape[0]}")
    yu, yd = yu[-K:], yd[-K:]

    mean_u, mean_d = yu.mean(), yd.mean()
    du, dd = yu - mean_u, yd - mean_d
    sxx = float(dd @ dd)
    if sxx / K < MIN_REGRESSOR_VAR:
        raise DegenerateRegressorError("BTCDOWN prices are constant over the window")
    beta = float(du @ dd) / sxx
    alpha = float(mean_u - beta * mean_d)

    stderr = float("nan")
    if K > 2:
        resid = du - beta * dd
        stderr = float(np.sqrt((resid @ resid) / (K - 2) / sxx))
    return BetaEstimate(beta_hat=beta, alpha_hat=alpha, window=K, anchor_time=anchor_time, stderr=stderr)


def rolling_betas(prices_u: Sequence[float], prices_d: Sequence[float], K: int) -> np.ndarray:
    """Slope for the window ending at each index; NaN before ``K - 1`` and where degenerate."""
    yu = np.asarray(prices_u, dtype=np.float64)
    yd = np.asarray(prices_d, dtype=np.float64)
    if yu.shape != yd.shape:
        raise LengthError("price arrays differ in length")
    out = np.full(yu.shape[0], np.nan)
    if yu.shape[0] < K:
        return out
    wu = sliding_window_view(yu, K)
    wd = sliding_window_view(yd, K)
    du = wu - wu.mean(axis=1, keepdims=True)
    dd = wd - wd.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", dd, dd)
    sxy = np.einsum("ij,ij->i", du, dd)
    ok = sxx / K >= MIN_REGRESSOR_VAR
    betas = np.full(sxx.shape, np.nan)
    betas[ok] = sxy[ok] / sxx[ok]
    out[K - 1:] = betas
    return out


def neutral_weight_u(beta_hat: float, y_u: float, y_d: float) -> float:
    """``w_u`` solving ``w_d / w_u = -beta * y_d / y_u`` with ``w_u + w_d = 1``."""
    return 1.0 / (1.0 - beta_hat * y_d / y_u)


def neutral_weights(beta: BetaEstimate | float, y_u: float, y_d: float) -> NeutralWeights:
    beta_hat = beta.beta_hat if isinstance(beta, BetaEstimate) else float(beta)
    if y_u <= 0 or y_d <= 0:
        raise RangeError("prices must be positive")
    if beta_hat >= 0:
        raise NeutralInfeasibleError(f"beta_hat={beta_hat:.6g} >= 0 has no long-only neutral allocation")
    w_u = neutral_weight_u(beta_hat, y_u, y_d)
    return NeutralWeights(w_u=w_u, w_d=1.0 - w_u)
