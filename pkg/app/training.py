"""Trajectory assembly, the training loop and the hyperparameter grid search.

A training sample is a segment of ``t_seq`` consecutive hourly decisions.
Decision ``k`` of a segment holds the model's weights ``w_k`` from its
anchor (a candle close) to the next close. Its return is

    R_k = mu_k * (w_k . (1 + r_{k+1})) * mgmt_k - 1

where ``mu_k`` is the trading-fee shrinkage paid moving from the drifted
weights of decision ``k - 1`` to ``w_k`` (``mu_0 = 1``) and ``mgmt_k`` the
management fee charged inside the period. Each segment starts at value 1;
its BTCUP volumes feed the variance-control penalties.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import ValidationError

from .backtest import required_history, run_backtest
from .data import TICKERS, AlignedSeries, feature_matrix, split, with_history
from .losses import TrajectoryBatch, loss_combined
from .neutral import rolling_betas
from .nn import autodiff as ad
from .nn.model import Params, forward_batch, init_params, save_checkpoint
from .nn.optim import OptimizerState, adam_step
from .portfolio import management_multiplier, shrinkage_terms
from .run_store import RunStore
from .schema import (
    LEARNED_VARIANTS,
    FeeSchedule,
    GridConfig,
    GridSummaryRow,
    LossConfig,
    LossVariant,
    RunResult,
    SplitSpec,
    Strategy,
    TrainConfig,
)
from .utils import (
    HOUR,
    ConfigError,
    DegenerateRegressorError,
    DivergenceError,
    InsufficientHistoryError,
    LevPairError,
    RangeError,
    SeedError,
    canonical_hash,
)
from .worker import run_jobs

logger = logging.getLogger(__name__)

_KIND_FOR_VARIANT = {variant: kind for kind, variant in LEARNED_VARIANTS.items()}


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySet:
    """Precomputed per-decision inputs over a training span.

    Arrays are indexed by decision number ``0 .. n_steps - 1``; segment ``s``
    covers decisions ``s .. s + t_seq - 1``.
    """

    features: np.ndarray
    anchors: np.ndarray
    times: tuple[datetime, ...]
    prices_u: np.ndarray
    prices_d: np.ndarray
    growth_u: np.ndarray
    growth_d: np.ndarray
    mgmt: np.ndarray
    beta_market: np.ndarray
    lookback: int
    t_seq: int

    @property
    def n_steps(self) -> int:
        return int(self.anchors.shape[0])

    def __len__(self) -> int:
        return self.n_steps - self.t_seq + 1

    def steps(self, segments: Sequence[int] | np.ndarray) -> np.ndarray:
        """Decision indices ``(B, t_seq)`` of the given segments."""
        seg = np.asarray(segments, dtype=np.int64)
        return seg[:, None] + np.arange(self.t_seq)[None, :]

    def windows(self, decisions: np.ndarray) -> np.ndarray:
        """Feature windows ``(N, lookback, 18)`` for decision indices, oldest row first."""
        view = sliding_window_view(self.features, self.lookback, axis=0)
        return view[self.anchors[decisions] - self.lookback + 1].transpose(0, 2, 1)


def make_trajectories(
    train: AlignedSeries,
    cfg: TrainConfig,
    fees: FeeSchedule | None = None,
    not_after: datetime | None = None,
) -> TrajectorySet:
    """Stride-1 segments of ``cfg.t_seq`` decisions over *train*.

    ``not_after`` is the last open time the training data may contain; a
    series reaching past it raises ``RangeError``.
    """
    fees = fees or FeeSchedule.for_scheme(cfg.fee_scheme)
    n = len(train)
    if not_after is not None and train.timestamps[-1] > not_after:
        raise RangeError(
            f"training data reaches {train.timestamps[-1].isoformat()}, past {not_after.isoformat()}"
        )

    first = max(cfg.lookback + cfg.norm_window - 1, cfg.beta_window - 1, train.warmup)
    last = n - 2
    usable = last - first + 1
    if usable < cfg.t_seq:
        raise InsufficientHistoryError(
            f"{max(usable, 0)} usable decision(s) < t_seq={cfg.t_seq}"
        )
    anchors = np.arange(first, last + 1)

    up, down = train.close("BTCUP"), train.close("BTCDOWN")
    betas = rolling_betas(up, down, cfg.beta_window)[anchors]
    if np.any(~np.isfinite(betas)):
        bad = int(anchors[np.flatnonzero(~np.isfinite(betas))[0]])
        raise DegenerateRegressorError(
            f"BTCDOWN prices constant over the beta window ending {train.timestamps[bad].isoformat()}"
        )

    times = tuple(train.decision_time(int(i)) for i in anchors)
    mgmt = np.array([management_multiplier(t, t + HOUR, fees) for t in times])
    tset = TrajectorySet(
        features=feature_matrix(train, cfg.norm_window),
        anchors=anchors,
        times=times,
        prices_u=up[anchors],
        prices_d=down[anchors],
        growth_u=1.0 + train.returns["BTCUP"][anchors],
        growth_d=1.0 + train.returns["BTCDOWN"][anchors],
        mgmt=mgmt,
        beta_market=betas,
        lookback=cfg.lookback,
        t_seq=cfg.t_seq,
    )
    logger.info("Built %d segment(s) of %d decisions from %d step(s)", len(tset), cfg.t_seq, usable)
    return tset


# ---------------------------------------------------------------------------
# Differentiable portfolio simulation
# ---------------------------------------------------------------------------


def simulate(tset: TrajectorySet, steps: np.ndarray, weights: Any, fees: FeeSchedule) -> TrajectoryBatch:
    """Run every segment from value 1 under *weights* ``(B * t_seq, 2)``.

    *weights* may be a tape ``Var``; the returned batch then stays on the
    tape. The sold-asset branch of the shrinkage is fixed by the forward
    values.
    """
    B, T = steps.shape
    w_u = ad.reshape(ad.index(weights, (slice(None), 0)), (B, T))
    w_d = ad.reshape(ad.index(weights, (slice(None), 1)), (B, T))
    yu, yd = tset.prices_u[steps], tset.prices_d[steps]
    gu, gd = tset.growth_u[steps], tset.growth_d[steps]
    mg = tset.mgmt[steps]

    value: Any = 1.0
    prev_u: Any = None
    prev_d: Any = None
    returns: list[Any] = []
    volumes: list[Any] = []
    for k in range(T):
        wu_k = ad.index(w_u, (slice(None), k))
        wd_k = ad.index(w_d, (slice(None), k))
        mu: Any = 1.0
        if k > 0 and fees.c > 0.0:
            hold_u = prev_u * gu[:, k - 1]
            hold_d = prev_d * gd[:, k - 1]
            total = hold_u + hold_d
            wp_u, wp_d = hold_u / total, hold_d / total
            sell_u = (np.asarray(ad.value_of(wp_u)) > np.asarray(ad.value_of(wu_k))).astype(np.float64)
            mu_sell_u, mu_sell_d = shrinkage_terms(wp_u, wp_d, wu_k, wd_k, fees.c)
            mu = mu_sell_u * sell_u + mu_sell_d * (1.0 - sell_u)
        invested = value * mu
        volumes.append(invested * wu_k / yu[:, k])
        gross = (wu_k * gu[:, k] + wd_k * gd[:, k]) * mg[:, k]
        period = mu * gross
        returns.append(period - 1.0)
        value = value * period
        prev_u, prev_d = wu_k, wd_k

    return TrajectoryBatch(
        weights_u=w_u,
        weights_d=w_d,
        prices_u=yu,
        prices_d=yd,
        volumes_u=ad.stack(volumes, axis=1),
        beta_market=tset.beta_market[steps],
        returns=ad.stack(returns, axis=1),
    )


def model_weights(params: Any, tset: TrajectorySet, steps: np.ndarray) -> Any:
    """Model output ``(B * t_seq, 2)`` for each decision, evaluating each window once."""
    uniq, inverse = np.unique(steps.ravel(), return_inverse=True)
    w = forward_batch(params, tset.windows(uniq))
    return ad.index(w, inverse)


def segment_loss(
    params: Any, tset: TrajectorySet, segments: Sequence[int], loss: LossConfig, fees: FeeSchedule,
) -> Any:
    """Batch-mean loss of the given segments (a ``Var`` when *params* are on a tape)."""
    steps = tset.steps(segments)
    batch = simulate(tset, steps, model_weights(params, tset, steps), fees)
    return loss_combined(batch, loss)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainOutcome:
    params: Params
    epoch_losses: list[float]
    n_segments: int
    wall_clock_s: float


def checkpoint_extra(cfg: TrainConfig) -> dict[str, Any]:
    return {
        "lookback": cfg.lookback,
        "norm_window": cfg.norm_window,
        "t_seq": cfg.t_seq,
        "variant": cfg.loss.variant.value,
        "gamma": cfg.loss.gamma,
        "xi": cfg.loss.xi,
        "fee_scheme": cfg.fee_scheme.value,
    }


def train(
    data: AlignedSeries,
    cfg: TrainConfig,
    not_after: datetime | None = None,
    checkpoint_path: str | None = None,
) -> TrainOutcome:
    """Fit the allocator on *data*; deterministic given ``cfg.seed``.

    Each epoch shuffles the segments with the seeded generator, steps Adam
    once per batch and follows a cosine schedule over all steps.
    """
    started = time.monotonic()
    fees = FeeSchedule.for_scheme(cfg.fee_scheme)
    tset = make_trajectories(data, cfg, fees=fees, not_after=not_after)
    n_seg = len(tset)
    n_batches = math.ceil(n_seg / cfg.batch_size)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.seed, hidden=cfg.hidden_size)
    state = OptimizerState(
        base_lr=cfg.base_lr,
        weight_decay=cfg.weight_decay,
        total_steps=cfg.epochs * n_batches,
    )
    names = list(params)
    tape = ad.Tape()
    epoch_losses: list[float] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_seg)
        batch_losses: list[float] = []
        for b in range(n_batches):
            segments = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            leaves = {name: tape.var(params[name]) for name in names}
            loss = segment_loss(leaves, tset, segments, cfg.loss, fees)
            value = float(np.asarray(ad.value_of(loss)))
            if not math.isfinite(value):
                tape.reset()
                logger.error("Non-finite loss at epoch %d batch %d", epoch, b)
                raise DivergenceError(f"loss is {value} at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            grads = tape.backward(loss, wrt=[leaves[n] for n in names])
            params = adam_step(state, params, dict(zip(names, grads)))
            batch_losses.append(value)
        epoch_losses.append(float(np.mean(batch_losses)))
        logger.info(
            "epoch %d/%d loss=%.6f lr=%.3g", epoch, cfg.epochs, epoch_losses[-1], state.current_lr(),
        )

    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, seed=cfg.seed, extra=checkpoint_extra(cfg))
    return TrainOutcome(
        params=params,
        epoch_losses=epoch_losses,
        n_segments=n_seg,
        wall_clock_s=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# One (config, seed) run over the walk-forward periods
# ---------------------------------------------------------------------------


def data_fingerprint(data: AlignedSeries) -> str:
    digest = hashlib.sha256()
    for ticker in TICKERS:
        digest.update(np.ascontiguousarray(data.bars[ticker], dtype="<f8").tobytes())
    digest.update(data.timestamps[0].isoformat().encode())
    return digest.hexdigest()


def config_hash(cfg: TrainConfig, periods: Sequence[SplitSpec], data: AlignedSeries) -> str:
    """Hash of everything but the seed that affects a run's results."""
    payload = {
        "train": cfg.model_dump(mode="json", exclude={"seed"}),
        "periods": [p.model_dump(mode="json") for p in periods],
    }
    return canonical_hash(payload, extra=[data_fingerprint(data)])


def run_config(
    data: AlignedSeries,
    cfg: TrainConfig,
    periods: Sequence[SplitSpec],
    store: RunStore,
    cfg_hash: str | None = None,
) -> RunResult:
    """Train on each period's train span and backtest on its test span."""
    cfg_hash = cfg_hash or config_hash(cfg, periods, data)
    started = time.monotonic()
    fees = FeeSchedule.for_scheme(cfg.fee_scheme)
    kind = _KIND_FOR_VARIANT[cfg.loss.variant]

    reports: list[dict] = []
    checkpoints: dict[str, str] = {}
    losses: dict[str, list[float]] = {}
    for spec in periods:
        train_span, test_span = split(data, spec)
        ckpt = store.checkpoint_path(cfg_hash, cfg.seed, spec.period)
        outcome = train(train_span, cfg, not_after=spec.train_end, checkpoint_path=str(ckpt))
        store.write_losses(cfg_hash, cfg.seed, spec.period, outcome.epoch_losses)

        strategy = Strategy(kind=kind, checkpoint=str(ckpt))
        history = required_history(strategy, cfg.lookback, cfg.norm_window)
        test = with_history(data, test_span, history)
        report = run_backtest(
            strategy, test, fees, period=spec.period, params=outcome.params,
            config_hash=cfg_hash, seed=cfg.seed,
            lookback=cfg.lookback, norm_window=cfg.norm_window,
        )
        reports.append(report.summary())
        checkpoints[str(spec.period)] = str(ckpt)
        losses[str(spec.period)] = outcome.epoch_losses

    last = str(periods[-1].period) if periods else None
    return RunResult(
        config_hash=cfg_hash,
        seed=cfg.seed,
        status="completed",
        checkpoint_path=checkpoints.get(last) if last else None,
        epoch_losses=losses.get(last, []) if last else [],
        checkpoints=checkpoints,
        period_losses=losses,
        test_reports=reports,
        config=cfg.model_dump(mode="json"),
        wall_clock_s=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass
class GridOutcome:
    runs: list[RunResult]
    summary: list[GridSummaryRow]


def expand_grid(grid: GridConfig, base: TrainConfig) -> list[TrainConfig]:
    """Cartesian product of the grid lists; gamma and xi collapse for the baseline loss."""
    configs: list[TrainConfig] = []
    seen: set[str] = set()
    for variant, scheme, bs, ep, lr, wd, gamma, xi in itertools.product(
        grid.variants, grid.fee_schemes, grid.batch_sizes, grid.epochs,
        grid.learning_rates, grid.weight_decays, grid.gammas, grid.xis,
    ):
        if variant is LossVariant.BASELINE:
            gamma, xi = 0.0, 0.0
        cfg = base.model_copy(update={
            "loss": LossConfig(variant=variant, gamma=gamma, xi=xi),
            "fee_scheme": scheme,
            "batch_size": bs,
            "epochs": ep,
            "base_lr": lr,
            "weight_decay": wd,
        })
        try:
            cfg = TrainConfig.model_validate(cfg.model_dump())
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        key = cfg.model_dump_json()
        if key in seen:
            continue
        seen.add(key)
        configs.append(cfg)
        if grid.max_configs and len(configs) >= grid.max_configs:
            break
    return configs


def summarize(configs: Sequence[TrainConfig], hashes: Sequence[str], runs: Sequence[RunResult]) -> list[GridSummaryRow]:
    """Mean and std (population) of the average test Sharpe per configuration, best first."""
    rows: list[GridSummaryRow] = []
    for cfg, h in zip(configs, hashes):
        mine = [r for r in runs if r.config_hash == h]
        ok = [r.average_test_sharpe for r in mine if r.status == "completed" and r.average_test_sharpe is not None]
        rows.append(GridSummaryRow(
            config_hash=h,
            params=cfg.model_dump(mode="json", exclude={"seed"}),
            n_runs=len(mine),
            n_failed=sum(1 for r in mine if r.status == "failed"),
            mean_sharpe=float(np.mean(ok)) if ok else None,
            std_sharpe=float(np.std(ok)) if ok else None,
            seed_sharpes=[float(s) for s in ok],
        ))
    rows.sort(key=lambda r: (r.mean_sharpe is None, -(r.mean_sharpe or 0.0)))
    return rows


def grid_search(
    data: AlignedSeries,
    grid: GridConfig,
    periods: Sequence[SplitSpec],
    store: RunStore,
    base: TrainConfig | None = None,
    max_workers: int | None = None,
) -> GridOutcome:
    """Run every configuration with every seed; failed runs are recorded, not fatal."""
    if len(set(grid.seeds)) != len(grid.seeds):
        raise SeedError(f"seeds must be distinct, got {grid.seeds}")
    if not grid.seeds:
        raise ConfigError("grid has no seeds")
    configs = expand_grid(grid, base or TrainConfig())
    if not configs:
        raise ConfigError("grid is empty")
    hashes = [config_hash(cfg, periods, data) for cfg in configs]

    jobs: list[tuple[TrainConfig, str]] = []
    for cfg, h in zip(configs, hashes):
        for seed in grid.seeds:
            jobs.append((cfg.model_copy(update={"seed": seed}), h))
    logger.info("Grid: %d configuration(s) x %d seed(s)", len(configs), len(grid.seeds))

    def job(item: tuple[TrainConfig, str]) -> RunResult:
        cfg, h = item
        if store.is_completed(h, cfg.seed):
            cached = store.load_result(h, cfg.seed)
            if cached is not None:
                logger.info("Skipping completed run %s/%d", h, cfg.seed)
                return cached
        store.set_processing(h, cfg.seed)
        try:
            result = run_config(data, cfg, periods, store, cfg_hash=h)
        except (LevPairError, ArithmeticError, ValueError) as exc:
            logger.error("Run %s/%d failed: %s", h, cfg.seed, exc)
            store.set_failed(h, cfg.seed, f"{type(exc).__name__}: {exc}")
            return RunResult(
                config_hash=h, seed=cfg.seed, status="failed",
                config=cfg.model_dump(mode="json"), error=f"{type(exc).__name__}: {exc}",
            )
        store.set_completed(result)
        return result

    for cfg, h in jobs:
        if not store.is_completed(h, cfg.seed):
            store.set_pending(h, cfg.seed)
    runs = run_jobs(job, jobs, max_workers=max_workers)
    return GridOutcome(runs=runs, summary=summarize(configs, hashes, runs))
