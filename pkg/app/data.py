"""Ingest, align, normalize and window hourly OHLCV data for BTC / BTCUP / BTCDOWN."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .schema import Candle, SplitSpec
from .utils import (
    HOUR,
    HOUR_FREQ,
    GapError,
    InsufficientHistoryError,
    LengthError,
    OrderError,
    ParseError,
    RangeError,
)

logger = logging.getLogger(__name__)

TICKERS: tuple[str, ...] = ("BTC", "BTCUP", "BTCDOWN")
CHANNELS: tuple[str, ...] = ("open", "high", "low", "close", "volume", "return")
CSV_HEADER: tuple[str, ...] = ("open_time", "open", "high", "low", "close", "volume")
BAR_COLUMNS: tuple[str, ...] = CSV_HEADER[1:]
N_FEATURES = len(TICKERS) * len(CHANNELS)

ZSCORE_EPS = 1e-8
TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def feature_columns() -> list[str]:
    """Column names of a feature row: ticker-major, channel-minor."""
    return [f"{ticker}.{channel}" for ticker in TICKERS for channel in CHANNELS]


# ---------------------------------------------------------------------------
# Frames and CSV I/O
# ---------------------------------------------------------------------------


def candles_frame(candles: Sequence[Candle]) -> pd.DataFrame:
    """OHLCV frame indexed by a UTC ``DatetimeIndex`` named ``open_time``."""
    index = pd.DatetimeIndex(pd.to_datetime([c.open_time for c in candles], utc=True), name="open_time")
    return pd.DataFrame(
        {col: [getattr(c, col) for c in candles] for col in BAR_COLUMNS},
        index=index,
        dtype=np.float64,
    )


def frame_candles(frame: pd.DataFrame, source: str = "frame") -> list[Candle]:
    """Validate each row of an OHLCV frame into a ``Candle``."""
    candles: list[Candle] = []
    records = frame[list(BAR_COLUMNS)].to_dict("records")
    for row_no, (when, values) in enumerate(zip(frame.index.to_pydatetime(), records), start=1):
        try:
            candles.append(Candle(open_time=when, **values))
        except ValidationError as exc:
            raise RangeError(f"{source}: row {row_no}: {exc.errors()[0]['msg']}") from exc
    return candles


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        header = [str(c).strip() for c in pd.read_csv(path, nrows=0).columns]
        if tuple(header) != CSV_HEADER:
            raise ParseError(f"{path.name}: expected header {','.join(CSV_HEADER)}")
        frame = pd.read_csv(
            path,
            dtype={"open_time": str},
            float_precision="round_trip",
            skipinitialspace=True,
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"{path.name}: {exc}") from exc
    frame.columns = header
    return frame.dropna(how="all").reset_index(drop=True)


def ingest_csv(path: str | Path) -> list[Candle]:
    """Read one ticker's CSV into validated candles in strictly increasing time order."""

    path = Path(path)
    if not path.is_file():
        raise ParseError(f"CSV not found: {path}")

    frame = _read_frame(path)
    bad = pd.Series(False, index=frame.index)
    for col in BAR_COLUMNS:
        if not pd.api.types.is_numeric_dtype(frame[col]):
            frame[col] = pd.to_numeric(frame[col], errors="coerce")
        bad |= frame[col].isna()
    times = pd.to_datetime(frame["open_time"].str.strip(), utc=True, format="ISO8601", errors="coerce")
    bad |= times.isna()
    if bad.any():
        row = int(bad.idxmax())
        raise ParseError(f"{path.name}: row {row + 1}: unparseable field in {frame.iloc[row].tolist()}")

    steps = times.diff().iloc[1:]
    backwards = steps.index[steps <= pd.Timedelta(0)]
    if len(backwards):
        row = int(backwards[0])
        raise OrderError(
            f"{path.name}: row {row + 1}: open_time {times[row].isoformat()} "
            f"not after {times[row - 1].isoformat()}"
        )

    frame.index = pd.DatetimeIndex(times, name="open_time")
    candles = frame_candles(frame, source=path.name)
    logger.info("Loaded %d candles from %s", len(candles), path)
    return candles


def write_csv(candles: Iterable[Candle], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = candles_frame(list(candles))
    out = frame.reset_index()
    out["open_time"] = frame.index.strftime(TIME_FORMAT)
    out.to_csv(path, index=False, columns=list(CSV_HEADER))
    return path


# ---------------------------------------------------------------------------
# Aligned series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignedSeries:
    """Three tickers on one contiguous hourly grid.

    ``bars[ticker]`` is an ``(n, 5)`` array of O, H, L, C, V; ``returns[ticker]``
    has length ``n - 1``. The first ``warmup`` rows are history only.
    """

    timestamps: tuple[datetime, ...]
    bars: dict[str, np.ndarray]
    returns: dict[str, np.ndarray]
    warmup: int = 0
    filled_hours: tuple[datetime, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def gap_filled(self) -> bool:
        return bool(self.filled_hours)

    def close(self, ticker: str) -> np.ndarray:
        return self.bars[ticker][:, 3]

    def decision_time(self, i: int) -> datetime:
        """Decision instant after candle ``i`` closes."""
        return self.timestamps[i] + HOUR

    def index_of(self, open_time: datetime) -> int:
        offset = (open_time - self.timestamps[0]) / HOUR
        i = int(round(offset))
        if i < 0 or i >= len(self) or self.timestamps[i] != open_time:
            raise RangeError(f"{open_time.isoformat()} not on the series grid")
        return i

    def rows(self, start: int, stop: int, warmup: int = 0) -> "AlignedSeries":
        """Contiguous sub-series ``[start, stop)`` with returns recomputed."""
        bars = {t: self.bars[t][start:stop].copy() for t in TICKERS}
        times = self.timestamps[start:stop]
        filled = tuple(h for h in self.filled_hours if times and times[0] <= h <= times[-1])
        return AlignedSeries(
            timestamps=times,
            bars=bars,
            returns={t: simple_returns(bars[t][:, 3]) for t in TICKERS},
            warmup=warmup,
            filled_hours=filled,
        )


def simple_returns(close: np.ndarray) -> np.ndarray:
    """``close[t] / close[t-1] - 1`` for ``t >= 1``."""
    close = np.asarray(close, dtype=np.float64)
    return close[1:] / close[:-1] - 1.0



def align(
    btc: Sequence[Candle],
    up: Sequence[Candle],
    down: Sequence[Candle],
    gap_fill: bool = False,
) -> AlignedSeries:
    """Intersect the three candle series on a common contiguous hourly grid.

    Interior gaps raise ``GapError`` unless ``gap_fill`` is set, in which case
    each ticker's last bar is carried forward as a flat zero-volume bar and the
    filled hours are recorded on the result.
    """
    inputs = dict(zip(TICKERS, (btc, up, down)))
    frames: dict[str, pd.DataFrame] = {}
    for ticker, candles in inputs.items():
        if not candles:
            raise LengthError(f"{ticker}: no candles")
        frame = candles_frame(candles)
        frames[ticker] = frame[~frame.index.duplicated(keep="last")]

    joined = pd.concat(frames, axis=1, join="outer").sort_index()
    common = joined.dropna().index
    if common.empty:
        raise GapError("tickers share no timestamps")

    grid = pd.date_range(common[0], common[-1], freq=HOUR_FREQ, name="open_time")
    missing = grid.difference(common)
    if len(missing) and not gap_fill:
        preview = ", ".join(h.isoformat() for h in missing[:5])
        raise GapError(
            f"{len(missing)} interior hour(s) missing from the common grid: {preview}",
            missing=list(missing.to_pydatetime()),
        )
    if len(missing):
        logger.info("Forward-filling %d missing hour(s)", len(missing))

    window = joined.reindex(grid)
    bars: dict[str, np.ndarray] = {}
    for ticker in TICKERS:
        block = window[ticker].copy()
        close = block["close"].ffill()
        block["close"] = close
        for col in ("open", "high", "low"):
            block[col] = block[col].fillna(close)
        block["volume"] = block["volume"].fillna(0.0)
        bars[ticker] = block[list(BAR_COLUMNS)].to_numpy(dtype=np.float64)

    return AlignedSeries(
        timestamps=tuple(grid.to_pydatetime()),
        bars=bars,
        returns={t: simple_returns(bars[t][:, 3]) for t in TICKERS},
        filled_hours=tuple(missing.to_pydatetime()),
    )


def load_aligned(paths: dict[str, str | Path], gap_fill: bool = False) -> AlignedSeries:
    """Ingest one CSV per ticker and align them."""
    candles = {t: ingest_csv(paths[t]) for t in TICKERS}
    return align(candles["BTC"], candles["BTCUP"], candles["BTCDOWN"], gap_fill=gap_fill)


# ---------------------------------------------------------------------------
# Normalization and features
# ---------------------------------------------------------------------------


def rolling_zscore(series: np.ndarray, L_norm: int) -> np.ndarray:
    """Forward block z-score.

    The series is cut into consecutive blocks of ``L_norm`` starting at index
    0; block ``k`` is normalized with the mean and population std of block
    ``k - 1``. The first block has no preceding statistics and is returned as
    NaN. A trailing partial block uses the last full block's statistics.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if L_norm < 1:
        raise LengthError("L_norm must be positive")
    if n < 2 * L_norm:
        raise LengthError(f"series length {n} < 2*L_norm={2 * L_norm}")

    n_full = n // L_norm
    blocks = x[: n_full * L_norm].reshape(n_full, L_norm)
    means = blocks.mean(axis=1)
    stds = blocks.std(axis=1)
    flat = stds < ZSCORE_EPS
    if flat.any():
        logger.warning(
            "rolling_zscore: %d zero-variance block(s) of length %d; using std=%g",
            int(flat.sum()), L_norm, ZSCORE_EPS,
        )
        stds = np.where(flat, ZSCORE_EPS, stds)

    out = np.full(n, np.nan)
    for k in range(1, -(-n // L_norm)):
        lo, hi = k * L_norm, min((k + 1) * L_norm, n)
        out[lo:hi] = (x[lo:hi] - means[k - 1]) / stds[k - 1]
    return out


def feature_matrix(aligned: AlignedSeries, L_norm: int = 12) -> np.ndarray:
    """Normalized ``(n, 18)`` feature rows; rows before ``L_norm`` are NaN."""
    n = len(aligned)
    out = np.empty((n, N_FEATURES))
    col = 0
    for ticker in TICKERS:
        bars = aligned.bars[ticker]
        ret = np.concatenate([[0.0], aligned.returns[ticker]])
        for channel in (bars[:, 0], bars[:, 1], bars[:, 2], bars[:, 3], bars[:, 4], ret):
            out[:, col] = rolling_zscore(channel, L_norm)
            col += 1
    return out


@dataclass(frozen=True)
class FeatureWindow:
    """``L x 18`` normalized input matrix for the decision at ``anchor_time``."""

    matrix: np.ndarray
    anchor_time: datetime


def window_bounds(index: int, L: int, L_norm: int) -> tuple[int, int]:
    """Row range ``[lo, hi)`` of the window ending at candle ``index``."""
    lo, hi = index - L + 1, index + 1
    if lo < L_norm:
        raise InsufficientHistoryError(
            f"window ending at row {index} needs {L + L_norm} rows of history, has {index + 1}"
        )
    return lo, hi


def build_features(
    aligned: AlignedSeries,
    t: datetime,
    L: int = 48,
    L_norm: int = 12,
    features: np.ndarray | None = None,
) -> FeatureWindow:
    """Feature window for the decision at ``t`` (close of the candle opened at ``t - 1h``).

    Rows are oldest first. ``features`` may pass a precomputed
    ``feature_matrix(aligned, L_norm)`` to avoid recomputation in loops.
    """
    index = int(round((t - aligned.timestamps[0]) / HOUR)) - 1
    if index < 0:
        raise InsufficientHistoryError(f"{t.isoformat()} is at or before the series start")
    if index >= len(aligned):
        raise RangeError(f"{t.isoformat()} is after the series end")
    lo, hi = window_bounds(index, L, L_norm)
    if features is None:
        features = feature_matrix(aligned, L_norm)
    return FeatureWindow(matrix=features[lo:hi].copy(), anchor_time=t)


# ---------------------------------------------------------------------------
# Walk-forward split
# ---------------------------------------------------------------------------


def split(aligned: AlignedSeries, spec: SplitSpec) -> tuple[AlignedSeries, AlignedSeries]:
    """Cut the train and test spans (inclusive open-time bounds) out of *aligned*."""
    if spec.test_start <= spec.train_end:
        raise RangeError("test_start must be after train_end")
    if spec.train_end < spec.train_start or spec.test_end < spec.test_start:
        raise RangeError("range end precedes its start")
    first, last = aligned.timestamps[0], aligned.timestamps[-1]
    if spec.train_start < first or spec.test_end > last:
        raise RangeError(
            f"period {spec.period} [{spec.train_start.isoformat()}, {spec.test_end.isoformat()}] "
            f"outside data span [{first.isoformat()}, {last.isoformat()}]"
        )
    tr0, tr1 = aligned.index_of(spec.train_start), aligned.index_of(spec.train_end) + 1
    te0, te1 = aligned.index_of(spec.test_start), aligned.index_of(spec.test_end) + 1
    return aligned.rows(tr0, tr1), aligned.rows(te0, te1)


def with_history(aligned: AlignedSeries, span: AlignedSeries, history: int) -> AlignedSeries:
    """*span* preceded by up to ``history`` rows of *aligned*, marked as warmup."""
    start = aligned.index_of(span.timestamps[0])
    lo = max(0, start - history)
    stop = start + len(span)
    return aligned.rows(lo, stop, warmup=start - lo)
