"""Training objectives: negative Sharpe plus variance-controlled hinge penalties.

The allocation implies a slope ``beta_model = -(y_u w_d) / (y_d w_u)``
between BTCUP and BTCDOWN prices. The penalties are zero while
``beta_model`` stays inside the gamma-margin around the OLS market beta
and grow with the squared BTCUP volume outside it.

All functions accept floats, numpy arrays or autodiff ``Var`` values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from .nn import autodiff as ad
from .schema import LossConfig, LossVariant
from .utils import DivisionGuardError, LengthError, ZeroVolatilityError

logger = logging.getLogger(__name__)

MIN_WEIGHT_U = 1e-12
MIN_STD = 1e-15


@dataclass
class TrajectoryBatch:
    """Per-step quantities of ``B`` segments of ``T`` decisions, each shaped ``(B, T)``.

    ``volumes_u`` and ``returns`` come from the simulated portfolio path
    started at value 1; ``beta_market`` is a constant.
    """

    weights_u: Any
    weights_d: Any
    prices_u: np.ndarray
    prices_d: np.ndarray
    volumes_u: Any
    beta_market: np.ndarray
    returns: Any

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(ad.value_of(self.returns))


def segment_sharpe(returns: Any) -> Any:
    """Sharpe ratio along the last axis (sample std, ddof=1)."""
    if not isinstance(returns, ad.Var):
        returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(ad.value_of(returns))
    T = values.shape[-1]
    if T < 2:
        raise LengthError("Sharpe ratio needs at least two returns")
    if np.any(values.std(axis=-1, ddof=1) < MIN_STD):
        raise ZeroVolatilityError("a segment has constant returns")
    axis = values.ndim - 1
    centered = ad.add(returns, ad.neg(ad.mean(returns, axis=axis, keepdims=True)))
    var = ad.mul(ad.sum(ad.mul(centered, centered), axis=axis), 1.0 / (T - 1))
    return ad.mul(ad.mean(returns, axis=axis), ad.power(var, -0.5))


def _neg_sharpe(returns: Any) -> Any:
    return ad.neg(ad.mean(segment_sharpe(returns)))


def loss_baseline(batch: TrajectoryBatch | Any) -> Any:
    """Negative Sharpe ratio, averaged over segments when batched."""
    returns = batch.returns if isinstance(batch, TrajectoryBatch) else batch
    return _neg_sharpe(returns)


def beta_model(w: tuple[Any, Any], y: tuple[Any, Any]) -> Any:
    w_u, w_d = w
    y_u, y_d = y
    if np.any(np.asarray(ad.value_of(w_u)) < MIN_WEIGHT_U):
        raise DivisionGuardError(f"w_u below {MIN_WEIGHT_U}; beta_model undefined")
    return ad.neg(ad.mul(ad.mul(w_d, y_u), ad.power(ad.mul(w_u, y_d), -1.0)))


def margin_terms(beta_model_value: Any, beta_market: Any, gamma: float) -> tuple[Any, Any]:
    """``C1 = beta_model - (1+gamma) beta_market``, ``C2 = (1-gamma) beta_market - beta_model``."""
    c1 = ad.add(beta_model_value, ad.neg(ad.mul(beta_market, 1.0 + gamma)))
    c2 = ad.add(ad.mul(beta_market, 1.0 - gamma), ad.neg(beta_model_value))
    return c1, c2


def a1(c1: Any, c2: Any) -> Any:
    return ad.relu(ad.neg(ad.mul(c1, c2)))


def a2(c1: Any, c2: Any) -> Any:
    r1 = ad.relu(ad.neg(c1))
    r2 = ad.relu(ad.neg(c2))
    return ad.add(ad.mul(r1, r1), ad.mul(r2, r2))


def hl1_from_beta(beta_model_value: Any, beta_market: Any, v_u: Any, gamma: float) -> Any:
    c1, c2 = margin_terms(beta_model_value, beta_market, gamma)
    return ad.relu(ad.neg(ad.mul(ad.mul(v_u, v_u), ad.mul(c1, c2))))


def hl2_from_beta(beta_model_value: Any, beta_market: Any, v_u: Any, gamma: float) -> Any:
    c1, c2 = margin_terms(beta_model_value, beta_market, gamma)
    r1 = ad.relu(ad.neg(ad.mul(v_u, c1)))
    r2 = ad.relu(ad.neg(ad.mul(v_u, c2)))
    return ad.add(ad.mul(r1, r1), ad.mul(r2, r2))


def hl1(w: tuple[Any, Any], y: tuple[Any, Any], v_u: Any, beta_market: Any, gamma: float) -> Any:
    return hl1_from_beta(beta_model(w, y), beta_market, v_u, gamma)


def hl2(w: tuple[Any, Any], y: tuple[Any, Any], v_u: Any, beta_market: Any, gamma: float) -> Any:
    return hl2_from_beta(beta_model(w, y), beta_market, v_u, gamma)


_PENALTIES = {LossVariant.L1: hl1, LossVariant.L2: hl2}


def penalty(batch: TrajectoryBatch, cfg: LossConfig) -> Any:
    """Mean HL term over every step of every segment."""
    fn = _PENALTIES[cfg.variant]
    hl = fn(
        (batch.weights_u, batch.weights_d),
        (batch.prices_u, batch.prices_d),
        batch.volumes_u,
        batch.beta_market,
        cfg.gamma,
    )
    return ad.mean(hl)


def loss_combined(batch: TrajectoryBatch, cfg: LossConfig) -> Any:
    """``-SR + xi * mean(HL)``; the baseline variant or ``xi = 0`` is the bare negative Sharpe."""
    base = loss_baseline(batch)
    if cfg.variant is LossVariant.BASELINE or cfg.xi == 0.0:
        return base
    return ad.add(base, ad.mul(penalty(batch, cfg), cfg.xi))
