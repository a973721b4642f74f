"""Exchange klines (candlestick) client with pagination, retry and CSV cache.

Pages are requested with ``startTime`` / ``endTime`` / ``limit`` and merged;
the merged series must cover every hour of the requested range. Requests to
one endpoint are serialized so concurrent callers stay inside rate limits.

Results are cached as ``<cache_dir>/<symbol>_1h.csv`` with a ``.sha256``
sidecar; a cache whose hash matches and which covers the range is served
without any network call.
"""

from __future__ import annotations

import logging
import threading
import time
from datetime import datetime
from pathlib import Path
from typing import Any

import pandas as pd
import requests

from ..config import DATA_DIR, HTTP_RETRIES, HTTP_TIMEOUT, KLINES_PAGE_LIMIT, KLINES_URL
from ..data import BAR_COLUMNS, CSV_HEADER, candles_frame, frame_candles, ingest_csv, write_csv
from ..schema import Candle
from ..utils import (
    HOUR,
    HOUR_FREQ,
    ConfigError,
    EmptyRangeError,
    GapError,
    NetworkError,
    RangeError,
    RateLimitError,
    UnknownSymbolError,
    from_millis,
    sha256_file,
    to_millis,
)

logger = logging.getLogger(__name__)

SUPPORTED_INTERVAL = "1h"
_RATE_LIMIT_STATUS = (418, 429)
_INVALID_SYMBOL_CODE = -1121

_endpoint_locks: dict[str, threading.Lock] = {}
_endpoint_locks_guard = threading.Lock()

_session: requests.Session | None = None
_session_lock = threading.Lock()


def _get_session() -> requests.Session:
    """Return a cached session (one TCP/TLS pool for all pages)."""
    global _session
    with _session_lock:
        if _session is None:
            _session = requests.Session()
        return _session


def _reset_session() -> None:
    global _session
    with _session_lock:
        _session = None


def _endpoint_lock(url: str) -> threading.Lock:
    with _endpoint_locks_guard:
        return _endpoint_locks.setdefault(url, threading.Lock())


def cache_path(symbol: str, cache_dir: str | Path | None = None) -> Path:
    return Path(cache_dir or DATA_DIR) / f"{symbol}_{SUPPORTED_INTERVAL}.csv"


def _request_page(
    url: str, symbol: str, start_ms: int, end_ms: int, retries: int,
) -> list[list[Any]]:
    """GET one page, retrying rate limits and transient failures with backoff."""
    params = {
        "symbol": symbol,
        "interval": SUPPORTED_INTERVAL,
        "startTime": start_ms,
        "endTime": end_ms,
        "limit": KLINES_PAGE_LIMIT,
    }
    last_exc: Exception | None = None
    rate_limited = False
    for attempt in range(retries):
        wait = 2 ** attempt
        try:
            resp = _get_session().get(url, params=params, timeout=HTTP_TIMEOUT)
        except requests.RequestException as exc:
            _reset_session()
            last_exc = exc
            rate_limited = False
            logger.info(
                "klines %s attempt %d/%d failed: %s; retrying in %ds",
                symbol, attempt + 1, retries, exc, wait,
            )
        else:
            if resp.status_code in _RATE_LIMIT_STATUS:
                rate_limited = True
                retry_after = resp.headers.get("Retry-After")
                if retry_after and retry_after.isdigit():
                    wait = max(wait, int(retry_after))
                logger.info(
                    "klines %s rate limited (HTTP %d); retrying in %ds",
                    symbol, resp.status_code, wait,
                )
            elif resp.status_code == 400:
                body = _json_or_empty(resp)
                if isinstance(body, dict) and body.get("code") == _INVALID_SYMBOL_CODE:
                    raise UnknownSymbolError(f"Unknown symbol: {symbol}")
                raise NetworkError(f"klines {symbol}: HTTP 400 {body}")
            elif resp.status_code >= 500:
                rate_limited = False
                last_exc = NetworkError(f"HTTP {resp.status_code}")
                logger.info(
                    "klines %s server error %d; retrying in %ds",
                    symbol, resp.status_code, wait,
                )
            elif resp.status_code != 200:
                raise NetworkError(f"klines {symbol}: HTTP {resp.status_code}")
            else:
                payload = resp.json()
                if not isinstance(payload, list):
                    raise NetworkError(f"klines {symbol}: unexpected payload {payload!r:.200}")
                return payload
        if attempt < retries - 1:
            time.sleep(wait)

    if rate_limited:
        raise RateLimitError(f"klines {symbol}: still rate limited after {retries} attempts")
    raise NetworkError(f"klines {symbol}: failed after {retries} attempts: {last_exc}")


def _json_or_empty(resp: requests.Response) -> Any:
    try:
        return resp.json()
    except ValueError:
        return {}


def _pages_frame(rows: list[list[Any]], start: datetime, end: datetime) -> pd.DataFrame:
    """Page rows as an OHLCV frame on ``[start, end)``; a repeated open time keeps the later row."""
    if not rows:
        return candles_frame([])
    raw = pd.DataFrame([row[:6] for row in rows], columns=list(CSV_HEADER))
    frame = raw[list(BAR_COLUMNS)].astype(float)
    frame.index = pd.DatetimeIndex(
        pd.to_datetime(raw["open_time"].astype("int64"), unit="ms", utc=True), name="open_time",
    )
    frame = frame[~frame.index.duplicated(keep="last")].sort_index()
    return frame[(frame.index >= start) & (frame.index < end)]


def _check_complete(symbol: str, index: pd.DatetimeIndex, start: datetime, end: datetime) -> None:
    expected = pd.date_range(start, end, freq=HOUR_FREQ, inclusive="left")
    missing = expected.difference(index)
    if len(missing):
        preview = ", ".join(h.isoformat() for h in missing[:5])
        raise GapError(
            f"{symbol}: {len(missing)} missing hour(s): {preview}", missing=list(missing.to_pydatetime()),
        )


def _cached(symbol: str, path: Path, start: datetime, end: datetime) -> list[Candle] | None:
    sidecar = path.with_suffix(path.suffix + ".sha256")
    if not path.is_file() or not sidecar.is_file():
        return None
    if sidecar.read_text().strip() != sha256_file(path):
        logger.warning("Cache hash mismatch for %s; refetching", path)
        return None
    candles = [c for c in ingest_csv(path) if start <= c.open_time < end]
    try:
        _check_complete(symbol, candles_frame(candles).index, start, end)
    except GapError:
        return None
    logger.info("Cache hit for %s (%d candles)", symbol, len(candles))
    return candles


def fetch_klines(
    symbol: str,
    interval: str,
    time_range: tuple[datetime, datetime],
    cache_dir: str | Path | None = None,
    use_cache: bool = True,
    url: str | None = None,
    retries: int | None = None,
) -> list[Candle]:
    """Hourly candles for ``[start, end)``, fetched page by page and cached."""

    if interval != SUPPORTED_INTERVAL:
        raise ConfigError(f"Only the {SUPPORTED_INTERVAL} interval is supported, got {interval!r}")
    start, end = time_range
    if end <= start:
        raise EmptyRangeError(f"empty range [{start.isoformat()}, {end.isoformat()})")
    if start.minute or start.second or start.microsecond:
        raise RangeError("range start must be hour-aligned")

    path = cache_path(symbol, cache_dir)
    if use_cache:
        cached = _cached(symbol, path, start, end)
        if cached is not None:
            return cached

    endpoint = url or KLINES_URL
    end_ms = to_millis(end) - 1
    rows: list[list[Any]] = []
    with _endpoint_lock(endpoint):
        cursor = to_millis(start)
        while cursor <= end_ms:
            page = _request_page(endpoint, symbol, cursor, end_ms, retries or HTTP_RETRIES)
            if not page:
                break
            rows.extend(page)
            last_open = from_millis(int(page[-1][0]))
            cursor = to_millis(last_open + HOUR)
            if len(page) < KLINES_PAGE_LIMIT:
                break

    frame = _pages_frame(rows, start, end)
    _check_complete(symbol, frame.index, start, end)
    candles = frame_candles(frame, source=symbol)
    logger.info("Fetched %d candles for %s", len(candles), symbol)

    write_csv(candles, path)
    path.with_suffix(path.suffix + ".sha256").write_text(sha256_file(path) + "\n")
    return candles
