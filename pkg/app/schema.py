"""Pydantic models for market data, configuration, reports and manifests."""

from __future__ import annotations

import re
from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, Any, List

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

# Hyperparameter search grids.
BATCH_SIZES = (64, 128, 256, 512)
EPOCHS = (80, 100, 120, 140)
LEARNING_RATES = (1e-5, 3e-5, 5e-5, 1e-4, 3e-4, 5e-4, 1e-3)
WEIGHT_DECAYS = (0.0, 1e-4, 3e-4, 5e-4, 1e-3)
GAMMAS = tuple(round(0.1 * i, 1) for i in range(11))
XIS = (1e-6, 3e-6, 5e-6, 1e-5, 3e-5, 5e-5, 1e-4, 3e-4, 5e-4, 1e-3)

TRADING_FEE = 0.00075
MANAGEMENT_FEE = 0.0001

_TRANSPOSED_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})(.*)$")


def _utc(value: Any) -> Any:
    """Coerce to aware UTC; repairs ``YYYY-DD-MM`` when the month is > 12."""

    if isinstance(value, str):
        text = value.strip().replace(" ", "T", 1)
        m = _TRANSPOSED_DATE.match(text)
        if m and int(m.group(2)) > 12 >= int(m.group(3)):
            text = f"{m.group(1)}-{m.group(3)}-{m.group(2)}{m.group(4)}"
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        value = datetime.fromisoformat(text)
    if isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        return value.astimezone(timezone.utc)
    return value


UtcDatetime = Annotated[datetime, BeforeValidator(_utc)]


# ---------------------------------------------------------------------------
# Market data
# ---------------------------------------------------------------------------


class Candle(BaseModel):
    """One hourly OHLCV bar."""

    model_config = ConfigDict(frozen=True)

    open_time: UtcDatetime
    open: float
    high: float
    low: float
    close: float
    volume: float

    @model_validator(mode="after")
    def _check_bar(self) -> "Candle":
        t = self.open_time
        if t.minute or t.second or t.microsecond:
            raise ValueError(f"open_time {t.isoformat()} is not hour-aligned")
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValueError("prices must be positive")
        if self.volume < 0:
            raise ValueError("volume must be non-negative")
        if not (self.low <= min(self.open, self.close) <= max(self.open, self.close) <= self.high):
            raise ValueError("expected low <= open,close <= high")
        return self


class SplitSpec(BaseModel):
    """Train/test date ranges for one walk-forward period (bounds inclusive)."""

    period: int = 1
    train_start: UtcDatetime
    train_end: UtcDatetime
    test_start: UtcDatetime
    test_end: UtcDatetime

    @model_validator(mode="after")
    def _check_order(self) -> "SplitSpec":
        if self.train_end < self.train_start or self.test_end < self.test_start:
            raise ValueError(f"period {self.period}: range end precedes its start")
        if self.test_start <= self.train_end:
            raise ValueError(f"period {self.period}: test_start must be after train_end")
        return self


# Walk-forward periods; Period 3's end date is repaired from "2021-30-12".
DEFAULT_PERIODS: List[dict] = [
    {
        "period": 1,
        "train_start": "2020-05-15 00:00", "train_end": "2021-07-03 23:00",
        "test_start": "2021-07-04 00:00", "test_end": "2021-09-01 23:00",
    },
    {
        "period": 2,
        "train_start": "2020-05-15 00:00", "train_end": "2021-09-01 23:00",
        "test_start": "2021-09-02 00:00", "test_end": "2021-10-31 23:00",
    },
    {
        "period": 3,
        "train_start": "2020-05-15 00:00", "train_end": "2021-10-31 23:00",
        "test_start": "2021-11-01 00:00", "test_end": "2021-30-12 23:00",
    },
]


# ---------------------------------------------------------------------------
# Fees and losses
# ---------------------------------------------------------------------------


class FeeScheme(str, Enum):
    NO_FEE = "none"
    FEE = "fee"


class FeeSchedule(BaseModel):
    """Trading fee ``c``, daily management fee ``m`` and the UTC hour it is charged."""

    model_config = ConfigDict(frozen=True)

    c: float = Field(default=0.0, ge=0.0, lt=1.0)
    m: float = Field(default=0.0, ge=0.0, lt=1.0)
    management_hour: int = Field(default=0, ge=0, le=23)

    @classmethod
    def for_scheme(cls, scheme: FeeScheme | str) -> "FeeSchedule":
        if FeeScheme(scheme) is FeeScheme.FEE:
            return cls(c=TRADING_FEE, m=MANAGEMENT_FEE)
        return cls()

    @property
    def is_free(self) -> bool:
        return self.c == 0.0 and self.m == 0.0


class LossVariant(str, Enum):
    BASELINE = "baseline"
    L1 = "l1"
    L2 = "l2"


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: LossVariant = LossVariant.BASELINE
    gamma: float = Field(default=0.0, ge=0.0, le=1.0)
    xi: float = Field(default=0.0, ge=0.0)


class TrainConfig(BaseModel):
    """One training run. Search-grid membership is enforced unless disabled."""

    model_config = ConfigDict(frozen=True)

    loss: LossConfig = Field(default_factory=LossConfig)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=80, ge=1)
    base_lr: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    fee_scheme: FeeScheme = FeeScheme.NO_FEE
    seed: int = 0
    t_seq: int = Field(default=32, ge=2)
    lookback: int = Field(default=48, ge=1)
    beta_window: int = Field(default=48, ge=2)
    norm_window: int = Field(default=12, ge=2)
    hidden_size: int = Field(default=64, ge=1)
    enforce_search_grid: bool = True

    @model_validator(mode="after")
    def _check_grid(self) -> "TrainConfig":
        if not self.enforce_search_grid:
            return self
        checks = [
            ("batch_size", self.batch_size, BATCH_SIZES),
            ("epochs", self.epochs, EPOCHS),
            ("base_lr", self.base_lr, LEARNING_RATES),
            ("weight_decay", self.weight_decay, WEIGHT_DECAYS),
        ]
        for name, value, grid in checks:
            if not any(abs(value - g) <= 1e-12 * max(1.0, abs(g)) for g in grid):
                raise ValueError(f"{name}={value} not in search grid {list(grid)}")
        return self


class GridConfig(BaseModel):
    """Hyperparameter lists searched by ``grid``; the cartesian product is run."""

    variants: List[LossVariant] = Field(default_factory=lambda: [LossVariant.BASELINE])
    fee_schemes: List[FeeScheme] = Field(default_factory=lambda: [FeeScheme.NO_FEE])
    batch_sizes: List[int] = Field(default_factory=lambda: [64])
    epochs: List[int] = Field(default_factory=lambda: [80])
    learning_rates: List[float] = Field(default_factory=lambda: [1e-3])
    weight_decays: List[float] = Field(default_factory=lambda: [0.0])
    gammas: List[float] = Field(default_factory=lambda: [0.0])
    xis: List[float] = Field(default_factory=lambda: [0.0])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    max_configs: int | None = Field(default=None, ge=1)

    @field_validator("gammas")
    @classmethod
    def _gamma_bounds(cls, v: List[float]) -> List[float]:
        if any(g < 0.0 or g > 1.0 for g in v):
            raise ValueError("gamma values must lie in [0, 1]")
        return v

    @field_validator("xis")
    @classmethod
    def _xi_bounds(cls, v: List[float]) -> List[float]:
        if any(x < 0.0 for x in v):
            raise ValueError("xi values must be >= 0")
        return v


# ---------------------------------------------------------------------------
# Metrics and reports
# ---------------------------------------------------------------------------


class MetricsRow(BaseModel):
    sharpe: float
    fapv: float = Field(gt=0.0)
    mdd: float = Field(ge=0.0, le=1.0)


class StrategyKind(str, Enum):
    NS = "ns"
    SVC1 = "svc1"
    SVC2 = "svc2"
    NWP = "nwp"
    EWP = "ewp"
    GMVP = "gmvp"
    BTC_HOLD = "btc"

    @property
    def learned(self) -> bool:
        return self in (StrategyKind.NS, StrategyKind.SVC1, StrategyKind.SVC2)

    @property
    def label(self) -> str:
        return "BTC" if self is StrategyKind.BTC_HOLD else self.name


LEARNED_VARIANTS = {
    StrategyKind.NS: LossVariant.BASELINE,
    StrategyKind.SVC1: LossVariant.L1,
    StrategyKind.SVC2: LossVariant.L2,
}


class Strategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: StrategyKind
    checkpoint: str | None = None
    window: int = Field(default=48, ge=2)

    @model_validator(mode="after")
    def _learned_needs_checkpoint(self) -> "Strategy":
        if self.kind.learned and not self.checkpoint:
            raise ValueError(f"strategy {self.kind.value} requires a checkpoint")
        return self


class BacktestReport(BaseModel):
    """Result of one (strategy, period, fee scheme) backtest, with audit trail."""

    model_config = ConfigDict(json_encoders={datetime: lambda dt: dt.isoformat()})

    strategy: StrategyKind
    period: int
    fee_scheme: FeeScheme
    metrics: MetricsRow
    n_steps: int
    config_hash: str = ""
    seed: int | None = None
    gap_filled: bool = False
    times: List[datetime] = Field(default_factory=list)
    weights: List[List[float]] = Field(default_factory=list)
    values: List[float] = Field(default_factory=list)
    returns: List[float] = Field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        """Flat record used by the report JSON files and CSV summary."""
        return {
            "strategy": self.strategy.value,
            "period": self.period,
            "fee_scheme": self.fee_scheme.value,
            "sharpe": self.metrics.sharpe,
            "fapv": self.metrics.fapv,
            "mdd": self.metrics.mdd,
            "n_steps": self.n_steps,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }


class RunResult(BaseModel):
    """Artifacts and outcome of one (config, seed) training run."""

    config_hash: str
    seed: int
    status: str = "completed"
    checkpoint_path: str | None = None
    epoch_losses: List[float] = Field(default_factory=list)
    checkpoints: dict[str, str] = Field(default_factory=dict)
    period_losses: dict[str, List[float]] = Field(default_factory=dict)
    test_reports: List[dict] = Field(default_factory=list)
    config: dict = Field(default_factory=dict)
    wall_clock_s: float = 0.0
    error: str | None = None

    @property
    def average_test_sharpe(self) -> float | None:
        values = [r["sharpe"] for r in self.test_reports if r.get("sharpe") is not None]
        if not values:
            return None
        return sum(values) / len(values)


class GridSummaryRow(BaseModel):
    config_hash: str
    params: dict
    n_runs: int
    n_failed: int
    mean_sharpe: float | None = None
    std_sharpe: float | None = None
    seed_sharpes: List[float] = Field(default_factory=list)


class RunManifest(BaseModel):
    model_config = ConfigDict(json_encoders={datetime: lambda dt: dt.isoformat()})

    command: str
    config_path: str | None = None
    config_hash: str
    started_at: datetime
    finished_at: datetime | None = None
    artifacts: dict[str, str] = Field(default_factory=dict)
    tool_version: str
    commit: str
    effective_config: dict = Field(default_factory=dict)


# ---------------------------------------------------------------------------
# Experiment config file
# ---------------------------------------------------------------------------


class DataConfig(BaseModel):
    symbols: dict[str, str] = Field(
        default_factory=lambda: {
            "BTC": "BTCUSDT", "BTCUP": "BTCUPUSDT", "BTCDOWN": "BTCDOWNUSDT",
        }
    )
    start: UtcDatetime = Field(default_factory=lambda: _utc("2020-05-15T00:00:00Z"))
    end: UtcDatetime = Field(default_factory=lambda: _utc("2021-12-31T00:00:00Z"))
    gap_fill: bool = False
    csv: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "DataConfig":
        missing = {"BTC", "BTCUP", "BTCDOWN"} - set(self.symbols)
        if missing:
            raise ValueError(f"symbols missing tickers: {sorted(missing)}")
        if self.end <= self.start:
            raise ValueError("data.end must be after data.start")
        return self


class BacktestConfig(BaseModel):
    strategies: List[StrategyKind] = Field(default_factory=lambda: list(StrategyKind))
    fee_schemes: List[FeeScheme] = Field(default_factory=lambda: list(FeeScheme))
    window: int = Field(default=48, ge=2)
    run_dir: str | None = None


class ExperimentConfig(BaseModel):
    data: DataConfig = Field(default_factory=DataConfig)
    periods: List[SplitSpec] = Field(
        default_factory=lambda: [SplitSpec(**p) for p in DEFAULT_PERIODS]
    )
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    backtest: BacktestConfig = Field(default_factory=BacktestConfig)
