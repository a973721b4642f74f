"""Summary tables over a grid of backtest reports.

Two tables per fee scheme:

- average Sharpe over the test periods, as mean +/- std across seeds for
  the learned strategies;
- per-period Sharpe / fAPV / MDD, using for each learned strategy the seed
  whose average Sharpe is the median.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .schema import BacktestReport, FeeScheme, StrategyKind
from .utils import MissingCellError

logger = logging.getLogger(__name__)

CSV_FIELDS = ("table", "fee_scheme", "strategy", "period", "sharpe", "sharpe_std", "fapv", "mdd", "seed")


@dataclass
class ReportTables:
    average: list[dict[str, Any]] = field(default_factory=list)
    per_period: list[dict[str, Any]] = field(default_factory=list)

    @property
    def text(self) -> str:
        return render_text(self)


def _records(reports: Iterable[BacktestReport | dict]) -> list[dict[str, Any]]:
    return [r.summary() if isinstance(r, BacktestReport) else dict(r) for r in reports]


def _median_seed(per_seed: dict[Any, dict[int, dict]]) -> Any:
    ranked = sorted(per_seed, key=lambda s: (np.mean([r["sharpe"] for r in per_seed[s].values()]), str(s)))
    return ranked[(len(ranked) - 1) // 2]


def report_table(
    reports: Iterable[BacktestReport | dict],
    strategies: Sequence[StrategyKind] | None = None,
    periods: Sequence[int] | None = None,
    schemes: Sequence[FeeScheme] | None = None,
) -> ReportTables:
    """Build the average-Sharpe and per-period tables; every cell must be present."""
    records = _records(reports)
    strategies = list(strategies or sorted(
        {StrategyKind(r["strategy"]) for r in records}, key=list(StrategyKind).index,
    ))
    periods = list(periods or sorted({int(r["period"]) for r in records}))
    schemes = list(schemes or sorted({FeeScheme(r["fee_scheme"]) for r in records}, key=list(FeeScheme).index))

    cells: dict[tuple[str, str, int], list[dict]] = {}
    for r in records:
        cells.setdefault((r["fee_scheme"], r["strategy"], int(r["period"])), []).append(r)
    missing = [
        (scheme.value, kind.value, p)
        for scheme in schemes for kind in strategies for p in periods
        if (scheme.value, kind.value, p) not in cells
    ]
    if missing:
        raise MissingCellError(f"{len(missing)} missing report cell(s), e.g. {missing[:3]}")

    tables = ReportTables()
    for scheme in schemes:
        for kind in strategies:
            per_seed: dict[Any, dict[int, dict]] = {}
            for p in periods:
                for r in cells[(scheme.value, kind.value, p)]:
                    per_seed.setdefault(r.get("seed"), {})[p] = r
            ragged = [(seed, p) for seed, rows in per_seed.items() for p in periods if p not in rows]
            if ragged:
                raise MissingCellError(
                    f"{kind.label} ({scheme.value}): {len(ragged)} missing (seed, period) cell(s): {ragged[:5]}"
                )
            averages = [float(np.mean([r["sharpe"] for r in rows.values()])) for rows in per_seed.values()]
            tables.average.append({
                "fee_scheme": scheme.value,
                "strategy": kind.label,
                "sharpe": float(np.mean(averages)),
                "sharpe_std": float(np.std(averages)) if kind.learned else None,
                "n_seeds": len(averages),
            })

            chosen = _median_seed(per_seed)
            for p in periods:
                row = per_seed[chosen][p]
                tables.per_period.append({
                    "fee_scheme": scheme.value,
                    "strategy": kind.label,
                    "period": p,
                    "sharpe": row["sharpe"],
                    "fapv": row["fapv"],
                    "mdd": row["mdd"],
                    "seed": chosen,
                })
    return tables


def _fmt(x: float | None, digits: int = 3) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def render_text(tables: ReportTables) -> str:
    """Aligned plain-text rendering of both tables."""
    lines: list[str] = []
    for scheme in dict.fromkeys(r["fee_scheme"] for r in tables.average):
        lines.append(f"Average Sharpe over test periods (fees: {scheme})")
        lines.append(f"  {'strategy':<8} {'sharpe':>16}")
        for r in tables.average:
            if r["fee_scheme"] != scheme:
                continue
            value = _fmt(r["sharpe"])
            if r["sharpe_std"] is not None:
                value += f" +/- {_fmt(r['sharpe_std'])}"
            lines.append(f"  {r['strategy']:<8} {value:>16}")
        lines.append("")
        lines.append(f"Per-period results (fees: {scheme})")
        lines.append(f"  {'strategy':<8} {'period':>6} {'sharpe':>8} {'fAPV':>8} {'MDD':>8}")
        for r in tables.per_period:
            if r["fee_scheme"] != scheme:
                continue
            lines.append(
                f"  {r['strategy']:<8} {r['period']:>6} {_fmt(r['sharpe']):>8} "
                f"{_fmt(r['fapv']):>8} {_fmt(r['mdd']):>8}"
            )
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def write_summary(tables: ReportTables, directory: str | Path) -> dict[str, str]:
    """Write ``summary.txt``, ``summary.csv`` and ``summary.json``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    txt = directory / "summary.txt"
    txt.write_text(render_text(tables))

    path_csv = directory / "summary.csv"
    frame = pd.concat(
        [
            pd.DataFrame(tables.average).assign(table="average"),
            pd.DataFrame(tables.per_period).assign(table="period"),
        ],
        ignore_index=True,
    )
    frame = frame.reindex(columns=list(CSV_FIELDS)).astype({"period": "Int64", "seed": "Int64"})
    frame.to_csv(path_csv, index=False)

    path_json = directory / "summary.json"
    path_json.write_text(json.dumps(
        {"average": tables.average, "per_period": tables.per_period}, indent=2, sort_keys=True,
    ))
    logger.info("Wrote summary tables to %s", directory)
    return {"summary_txt": str(txt), "summary_csv": str(path_csv), "summary_json": str(path_json)}


def load_reports(directory: str | Path) -> list[dict[str, Any]]:
    """Read every ``report_*.json`` in *directory* (the flat report schema)."""
    out: list[dict[str, Any]] = []
    for path in sorted(Path(directory).glob("report_*.json")):
        data = json.loads(path.read_text())
        out.append({k: data[k] for k in (
            "strategy", "period", "fee_scheme", "sharpe", "fapv", "mdd", "n_steps", "config_hash", "seed",
        ) if k in data})
    return out
