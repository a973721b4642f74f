"""Walk-forward backtests of the learned allocators and the benchmarks.

The test span is evaluated hour by hour. Anchor ``k`` is the close of test
candle ``k``; the portfolio is bought at anchor 0 from a value of 1 and is
rebalanced at every later anchor using data up to and including that close.
At the final anchor the portfolio is only marked to market.

Lookbacks read the warmup rows that precede the span (see
``app.data.with_history``).
"""

from __future__ import annotations

import logging
from datetime import datetime
from typing import Callable

import numpy as np

from . import config
from .data import AlignedSeries, feature_matrix, window_bounds
from .metrics import fapv, mdd, sharpe
from .neutral import estimate_beta, neutral_weights
from .nn.model import forward_batch, load_checkpoint
from .portfolio import PortfolioState, apply_price_move, reallocate
from .schema import (
    BacktestReport,
    FeeSchedule,
    FeeScheme,
    MetricsRow,
    Strategy,
    StrategyKind,
)
from .utils import (
    AuditError,
    DegenerateCovarianceError,
    DegenerateRegressorError,
    InsufficientHistoryError,
    LengthError,
    NeutralInfeasibleError,
    ZeroVolatilityError,
)

logger = logging.getLogger(__name__)

MIN_COV_DENOM = 1e-15
AUDIT_TOL = 1e-12
EQUAL_WEIGHTS = np.array([0.5, 0.5])

Params = dict[str, np.ndarray]
Decider = Callable[[int, np.ndarray | None], np.ndarray]


# ---------------------------------------------------------------------------
# Benchmark weights
# ---------------------------------------------------------------------------


def ewp_weights() -> np.ndarray:
    return EQUAL_WEIGHTS.copy()


def gmvp_weights(returns_u: np.ndarray, returns_d: np.ndarray) -> np.ndarray:
    """Two-asset minimum-variance weights from a window of hourly returns, long-only."""
    cov = np.cov(np.vstack([returns_u, returns_d]), ddof=1)
    var_u, var_d, cov_ud = cov[0, 0], cov[1, 1], cov[0, 1]
    denom = var_u + var_d - 2.0 * cov_ud
    if denom < MIN_COV_DENOM:
        raise DegenerateCovarianceError(f"minimum-variance denominator {denom:.3g} vanishes")
    w_u = float(np.clip((var_d - cov_ud) / denom, 0.0, 1.0))
    return np.array([w_u, 1.0 - w_u])


def nwp_weights(
    prices_u: np.ndarray,
    prices_d: np.ndarray,
    K: int,
    previous: np.ndarray | None,
    when: datetime | None = None,
) -> np.ndarray:
    """Neutral weights from the trailing *K* prices; falls back to *previous* when infeasible."""
    try:
        beta = estimate_beta(prices_u, prices_d, K, anchor_time=when)
        return np.array(neutral_weights(beta, prices_u[-1], prices_d[-1]).as_tuple())
    except (NeutralInfeasibleError, DegenerateRegressorError) as exc:
        held = previous if previous is not None else ewp_weights()
        logger.warning(
            "NWP fallback at %s: %s; holding %s",
            when.isoformat() if when else "?", exc, np.round(held, 6).tolist(),
        )
        return held.copy()


# ---------------------------------------------------------------------------
# Strategy plumbing
# ---------------------------------------------------------------------------


def required_history(strategy: Strategy, lookback: int = 48, norm_window: int = 12) -> int:
    """Rows needed before the first test candle."""
    if strategy.kind.learned:
        return lookback + norm_window - 1
    if strategy.kind in (StrategyKind.GMVP, StrategyKind.NWP):
        return strategy.window
    return 0


def _learned_decider(
    series: AlignedSeries, anchors: np.ndarray, params: Params, lookback: int, norm_window: int,
) -> Decider:
    feats = feature_matrix(series, norm_window)
    windows = np.empty((anchors.shape[0], lookback, feats.shape[1]))
    for k, i in enumerate(anchors):
        lo, hi = window_bounds(int(i), lookback, norm_window)
        windows[k] = feats[lo:hi]
    weights = np.asarray(forward_batch(params, windows))
    return lambda k, _prev: weights[k]


def _benchmark_decider(series: AlignedSeries, anchors: np.ndarray, strategy: Strategy) -> Decider:
    kind, window = strategy.kind, strategy.window
    up, down = series.close("BTCUP"), series.close("BTCDOWN")
    r_up, r_down = series.returns["BTCUP"], series.returns["BTCDOWN"]

    def decide(k: int, prev: np.ndarray | None) -> np.ndarray:
        i = int(anchors[k])
        if kind is StrategyKind.EWP:
            return ewp_weights()
        if kind is StrategyKind.GMVP:
            try:
                return gmvp_weights(r_up[i - window:i], r_down[i - window:i])
            except DegenerateCovarianceError as exc:
                held = prev if prev is not None else ewp_weights()
                logger.warning("GMVP fallback at %s: %s", series.decision_time(i).isoformat(), exc)
                return held.copy()
        return nwp_weights(
            up[i - window + 1:i + 1], down[i - window + 1:i + 1], window, prev,
            when=series.decision_time(i),
        )

    return decide


def _metrics(returns: np.ndarray, values: np.ndarray, label: str) -> MetricsRow:
    try:
        sr = sharpe(returns)
    except ZeroVolatilityError:
        logger.warning("%s: returns have zero volatility; reporting Sharpe 0", label)
        sr = 0.0
    return MetricsRow(sharpe=sr, fapv=fapv(returns), mdd=mdd(values))


def audit(report: BacktestReport) -> bool:
    """Recompute fAPV and MDD from the logged curve; raise under strict audit."""
    returns = np.asarray(report.returns)
    values = np.asarray(report.values)
    ok = (
        abs(fapv(returns) - report.metrics.fapv) <= AUDIT_TOL * max(1.0, report.metrics.fapv)
        and abs(values[-1] / values[0] - report.metrics.fapv) <= AUDIT_TOL * max(1.0, report.metrics.fapv)
        and abs(mdd(values) - report.metrics.mdd) <= AUDIT_TOL
    )
    if not ok:
        msg = f"audit mismatch for {report.strategy.value} period {report.period} ({report.fee_scheme.value})"
        if config.STRICT_AUDIT:
            raise AuditError(msg)
        logger.warning(msg)
    return ok


# ---------------------------------------------------------------------------
# Backtest loop
# ---------------------------------------------------------------------------


def _btc_hold(series: AlignedSeries, anchors: np.ndarray) -> tuple[np.ndarray, list[list[float]]]:
    close = series.close("BTC")[anchors]
    return close / close[0], [[1.0] for _ in anchors]


def run_backtest(
    strategy: Strategy,
    test: AlignedSeries,
    fees: FeeSchedule,
    period: int = 1,
    params: Params | None = None,
    config_hash: str = "",
    seed: int | None = None,
    lookback: int = 48,
    norm_window: int = 12,
) -> BacktestReport:
    """Evaluate *strategy* over the non-warmup rows of *test*.

    Learned strategies use *params* when given, else the strategy checkpoint
    (whose header supplies lookback and normalization window).
    """

    start = test.warmup
    anchors = np.arange(start, len(test))
    if anchors.shape[0] < 3:
        raise LengthError("test span needs at least three candles")

    if strategy.kind.learned and params is None:
        params, header = load_checkpoint(strategy.checkpoint)
        lookback = int(header["extra"].get("lookback", lookback))
        norm_window = int(header["extra"].get("norm_window", norm_window))
        seed = header.get("seed", seed)
    need = required_history(strategy, lookback, norm_window)
    if start < need:
        raise InsufficientHistoryError(
            f"{strategy.kind.value} needs {need} history rows before the test span, has {start}"
        )
    scheme = FeeScheme.NO_FEE if fees.is_free else FeeScheme.FEE

    if strategy.kind is StrategyKind.BTC_HOLD:
        values, weights = _btc_hold(test, anchors)
    else:
        if strategy.kind.learned:
            decide = _learned_decider(test, anchors, params, lookback, norm_window)
        else:
            decide = _benchmark_decider(test, anchors, strategy)
        values, weights = _simulate(test, anchors, decide, fees)

    returns = values[1:] / values[:-1] - 1.0
    times = [test.decision_time(int(i)) for i in anchors]
    report = BacktestReport(
        strategy=strategy.kind,
        period=period,
        fee_scheme=scheme,
        metrics=_metrics(returns, values, f"{strategy.kind.value} period {period}"),
        n_steps=int(returns.shape[0]),
        config_hash=config_hash,
        seed=seed,
        gap_filled=test.gap_filled,
        times=times,
        weights=weights,
        values=values.tolist(),
        returns=returns.tolist(),
    )
    audit(report)
    logger.info(
        "backtest %s period %d (%s): sharpe=%.4f fapv=%.4f mdd=%.4f",
        strategy.kind.value, period, scheme.value,
        report.metrics.sharpe, report.metrics.fapv, report.metrics.mdd,
    )
    return report


def _simulate(
    series: AlignedSeries, anchors: np.ndarray, decide: Decider, fees: FeeSchedule,
) -> tuple[np.ndarray, list[list[float]]]:
    """Value curve ``[1, p_1, ..., p_N]``; the entry trade pays the buy-side fee."""
    up, down = series.close("BTCUP"), series.close("BTCDOWN")

    def prices(k: int) -> tuple[float, float]:
        i = int(anchors[k])
        return float(up[i]), float(down[i])

    w = decide(0, None)
    state = PortfolioState.open(w, prices(0), series.decision_time(int(anchors[0])), value=1.0 - fees.c)
    values = [1.0]
    weights = [w.tolist()]
    last = anchors.shape[0] - 1
    for k in range(1, last + 1):
        when = series.decision_time(int(anchors[k]))
        if k < last:
            target = decide(k, state.weights)
        else:
            target = apply_price_move(state, prices(k)).weights_prime
        state, _ = reallocate(state, target, prices(k), fees, new_time=when)
        values.append(state.value)
        weights.append(state.weights.tolist())
    return np.asarray(values), weights


def backtest_grid(
    strategies: list[Strategy],
    test: AlignedSeries,
    schemes: list[FeeScheme],
    period: int,
    params: dict[StrategyKind, Params] | None = None,
) -> list[BacktestReport]:
    """Every (strategy, scheme) cell for one period, sequentially."""
    out: list[BacktestReport] = []
    for strategy in strategies:
        for scheme in schemes:
            out.append(
                run_backtest(
                    strategy, test, FeeSchedule.for_scheme(scheme), period=period,
                    params=(params or {}).get(strategy.kind),
                )
            )
    return out
