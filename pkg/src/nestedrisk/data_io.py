"""CSV loading, validation, and report persistence.

Price files carry one row per (date, ticker) with unadjusted and adjusted
open/close prices plus share volume; classification files assign each ticker
a sector/industry/sub-industry label triple.  Parsing is strict (bad
numbers, nonpositive prices, and duplicate keys are rejected with the file
row) and deterministic: the same bytes always produce the same panel and
the same label interning.  Floats round-trip through reports at 17
significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .backtest import BacktestReport, Metrics, PricePanel
from .taxonomy import ClassificationTree, TaxonomyError

__all__ = [
    "DataError",
    "load_prices",
    "load_classification",
    "write_report",
    "read_metrics_csv",
    "write_prices_csv",
    "write_classification_csv",
    "write_classification_mapping",
    "DataManifest",
    "build_manifest",
    "write_manifest",
    "read_key_value_file",
]

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("date", "ticker", "open", "close", "adj_open", "adj_close", "volume")
CLASSIFICATION_COLUMNS = ("ticker", "sector", "industry", "sub_industry")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _fmt(value: float) -> str:
    return format(value, ".17g")


def _fmt_opt(value: float | None) -> str:
    return "" if value is None else _fmt(value)


def _require_columns(df: pd.DataFrame, required, path, optional=()) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    extra = [c for c in df.columns if c not in (*required, *optional)]
    if extra:
        raise DataError(f"{path}: unexpected columns {extra}")


def _numeric_column(df: pd.DataFrame, col: str, path) -> np.ndarray:
    # numpy's string parser is correctly rounded (pd.to_numeric is not, which
    # would break the 17-significant-digit round-trip guarantee)
    values = None
    try:
        values = df[col].to_numpy().astype(np.float64)
    except ValueError:
        pass
    if values is not None and np.all(np.isfinite(values)):
        return values
    if values is not None:
        bad = np.nonzero(~np.isfinite(values))[0]
    else:
        coerced = pd.to_numeric(df[col].replace("", np.nan), errors="coerce").to_numpy()
        with np.errstate(invalid="ignore"):
            bad = np.nonzero(~np.isfinite(coerced))[0]
    row = int(bad[0])  # header is line 1, data starts at 2
    raise DataError(
        f"{path}:{row + 2}: cannot parse {col}={df[col].iloc[row]!r} as a finite number"
    )


def load_prices(path) -> PricePanel:
    """Load a price/volume CSV into an aligned panel, newest date first.

    Expected header: date,ticker,open,close,adj_open,adj_close,volume.  The
    adj_open column may be omitted, in which case it is derived as
    open * adj_close / close and the panel is flagged accordingly.  Missing
    (ticker, date) rows become NaN; row order in the file does not matter.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    required = [c for c in PRICE_COLUMNS if c != "adj_open"]
    _require_columns(df, required, path, optional=("adj_open",))
    if len(df) == 0:
        raise DataError(f"{path}: no data rows")

    parsed_dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    bad = parsed_dates.index[parsed_dates.isna()]
    if len(bad):
        raise DataError(
            f"{path}:{int(bad[0]) + 2}: cannot parse date {df['date'].iloc[bad[0]]!r} "
            "(expected YYYY-MM-DD)"
        )
    dup = df.duplicated(subset=["ticker", "date"], keep="first")
    if dup.any():
        row = int(np.nonzero(dup.to_numpy())[0][0])
        raise DataError(
            f"{path}:{row + 2}: duplicate row for "
            f"({df['ticker'].iloc[row]!r}, {df['date'].iloc[row]!r})"
        )

    derived = "adj_open" not in df.columns
    numeric = {}
    for col in ("open", "close", "adj_close", "volume") + (() if derived else ("adj_open",)):
        numeric[col] = _numeric_column(df, col, path)
    for col in ("open", "close", "adj_close") + (() if derived else ("adj_open",)):
        nonpos = np.nonzero(numeric[col] <= 0)[0]
        if nonpos.size:
            row = int(nonpos[0])
            raise DataError(f"{path}:{row + 2}: nonpositive {col} price {numeric[col][row]}")
    negvol = np.nonzero(numeric["volume"] < 0)[0]
    if negvol.size:
        row = int(negvol[0])
        raise DataError(f"{path}:{row + 2}: negative volume {numeric['volume'][row]}")
    if derived:
        numeric["adj_open"] = numeric["open"] * numeric["adj_close"] / numeric["close"]
        logger.warning("%s: adj_open column absent; derived as open * adj_close / close", path)

    tickers = tuple(sorted(set(df["ticker"])))
    dates64 = parsed_dates.to_numpy(dtype="datetime64[D]")
    unique_dates = np.unique(dates64)  # ascending
    n_dates, n_stocks = unique_dates.size, len(tickers)
    # row 0 is the most recent date
    date_rows = (n_dates - 1) - np.searchsorted(unique_dates, dates64)
    ticker_cols = pd.Categorical(df["ticker"], categories=tickers).codes

    arrays = {}
    for col in ("open", "close", "adj_open", "adj_close", "volume"):
        arr = np.full((n_dates, n_stocks), np.nan)
        arr[date_rows, ticker_cols] = numeric[col]
        arrays[col] = arr
    return PricePanel(
        tickers=tickers,
        dates=unique_dates[::-1],
        open=arrays["open"],
        close=arrays["close"],
        adj_open=arrays["adj_open"],
        adj_close=arrays["adj_close"],
        volume=arrays["volume"],
        adj_open_derived=derived,
    )


def load_classification(path, tickers=None) -> tuple[ClassificationTree, tuple[str, ...]]:
    """Load sector/industry/sub-industry assignments into a tree.

    Labels are interned to dense indices in first-seen file order.  When
    ``tickers`` is given (the price panel's axis), the tree covers exactly
    the classified subset in that order and the unclassified remainder is
    returned as the exclusion list.  A sub-industry appearing under two
    industries (or an industry under two sectors) is a taxonomy
    inconsistency and is rejected.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    _require_columns(df, CLASSIFICATION_COLUMNS, path)
    if len(df) == 0:
        raise DataError(f"{path}: no data rows")
    for col in CLASSIFICATION_COLUMNS:
        empty = df.index[df[col] == ""]
        if len(empty):
            raise DataError(f"{path}:{int(empty[0]) + 2}: empty {col}")
    dup = df.duplicated(subset=["ticker"], keep="first")
    if dup.any():
        row = int(np.nonzero(dup.to_numpy())[0][0])
        raise DataError(f"{path}:{row + 2}: duplicate ticker {df['ticker'].iloc[row]!r}")

    parent_of_sub: dict[str, str] = {}
    parent_of_ind: dict[str, str] = {}
    assignment: dict[str, tuple[str, str, str]] = {}
    for pos in range(len(df)):
        ticker = df["ticker"].iloc[pos]
        sec, ind, sub = df["sector"].iloc[pos], df["industry"].iloc[pos], df["sub_industry"].iloc[pos]
        if parent_of_sub.setdefault(sub, ind) != ind:
            raise TaxonomyError(
                f"{path}:{pos + 2}: sub-industry {sub!r} maps to both "
                f"{parent_of_sub[sub]!r} and {ind!r}"
            )
        if parent_of_ind.setdefault(ind, sec) != sec:
            raise TaxonomyError(
                f"{path}:{pos + 2}: industry {ind!r} maps to both "
                f"{parent_of_ind[ind]!r} and {sec!r}"
            )
        assignment[ticker] = (sec, ind, sub)

    if tickers is None:
        covered = list(assignment)
        excluded: tuple[str, ...] = ()
    else:
        covered = [t for t in tickers if t in assignment]
        excluded = tuple(t for t in tickers if t not in assignment)
        if excluded:
            logger.warning(
                "%s: %d tickers have no classification and are excluded", path, len(excluded)
            )
        if not covered:
            raise DataError(f"{path}: none of the requested tickers are classified")

    sub_index: dict[str, int] = {}
    ind_index: dict[str, int] = {}
    sec_index: dict[str, int] = {}
    file_order = [t for t in assignment if t in set(covered)]
    for t in file_order:
        sec, ind, sub = assignment[t]
        sub_index.setdefault(sub, len(sub_index))
        ind_index.setdefault(ind, len(ind_index))
        sec_index.setdefault(sec, len(sec_index))

    sub_of_stock = [sub_index[assignment[t][2]] for t in covered]
    ind_of_sub = [0] * len(sub_index)
    for sub, k in sub_index.items():
        ind_of_sub[k] = ind_index[parent_of_sub[sub]]
    sec_of_ind = [0] * len(ind_index)
    for ind, a in ind_index.items():
        sec_of_ind[a] = sec_index[parent_of_ind[ind]]

    def _ordered(index: dict[str, int]) -> tuple[str, ...]:
        out = [""] * len(index)
        for label, k in index.items():
            out[k] = label
        return tuple(out)

    tree = ClassificationTree.from_maps(
        [sub_of_stock, ind_of_sub, sec_of_ind],
        tickers=covered,
        labels=[_ordered(sub_index), _ordered(ind_index), _ordered(sec_index)],
    )
    return tree, excluded


# -- report persistence ---------------------------------------------------


def write_report(report: BacktestReport, out_dir) -> dict[str, Path]:
    """Write metrics.csv and pnl_daily.csv; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    pnl_path = out / "pnl_daily.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("strategy,roc,sr,cps\n")
        for name, m in report.metrics_rows():
            fh.write(f"{name},{_fmt(m.roc)},{_fmt_opt(m.sharpe)},{_fmt_opt(m.cents_per_share)}\n")
    with open(pnl_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("date,strategy,pnl,shares,gross,net\n")
        for result in report.results:
            for k in range(result.dates.size):
                fh.write(
                    f"{result.dates[k]},{result.name},{_fmt(result.pnl[k])},"
                    f"{_fmt(result.shares[k])},{_fmt(result.gross[k])},{_fmt(result.net[k])}\n"
                )
    return {"metrics": metrics_path, "pnl_daily": pnl_path}


def read_metrics_csv(path) -> list[tuple[str, Metrics]]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                (
                    rec["strategy"],
                    Metrics(
                        roc=float(rec["roc"]),
                        sharpe=float(rec["sr"]) if rec["sr"] else None,
                        cents_per_share=float(rec["cps"]) if rec["cps"] else None,
                    ),
                )
            )
    return rows


def write_prices_csv(panel: PricePanel, path) -> None:
    """Persist a panel in the load_prices schema (oldest date first)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PRICE_COLUMNS) + "\n")
        for row in range(panel.n_dates - 1, -1, -1):
            date = panel.dates[row]
            for col, ticker in enumerate(panel.tickers):
                values = (
                    panel.open[row, col],
                    panel.close[row, col],
                    panel.adj_open[row, col],
                    panel.adj_close[row, col],
                    panel.volume[row, col],
                )
                if any(np.isnan(v) for v in values):
                    continue
                fh.write(f"{date},{ticker}," + ",".join(_fmt(v) for v in values) + "\n")


def write_classification_csv(tree: ClassificationTree, path) -> None:
    if tree.tickers is None or tree.labels is None:
        raise DataError("tree has no tickers/labels to write")
    maps = tree.stock_group_maps()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CLASSIFICATION_COLUMNS) + "\n")
        for i, ticker in enumerate(tree.tickers):
            sub = tree.labels[0][maps[0][i]]
            ind = tree.labels[1][maps[1][i]]
            sec = tree.labels[2][maps[2][i]]
            fh.write(f"{ticker},{sec},{ind},{sub}\n")


def write_classification_mapping(tree: ClassificationTree, path) -> None:
    """Audit file: per ticker, the interned ids next to the original labels."""
    if tree.tickers is None:
        raise DataError("tree has no tickers to write")
    maps = tree.stock_group_maps()
    names = tree.level_names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = ["ticker"]
        for name in names:
            header.append(f"{name}_id")
            if tree.labels is not None:
                header.append(name)
        fh.write(",".join(header) + "\n")
        for i, ticker in enumerate(tree.tickers):
            row = [ticker]
            for lvl in range(tree.n_levels):
                g = int(maps[lvl][i])
                row.append(str(g))
                if tree.labels is not None:
                    row.append(tree.labels[lvl][g])
            fh.write(",".join(row) + "\n")


# -- manifest -------------------------------------------------------------


@dataclass(frozen=True)
class DataManifest:
    """Provenance snapshot of a parsed data set."""

    price_path: str
    classification_path: str
    n_tickers: int
    n_dates: int
    date_min: str
    date_max: str
    adj_open_derived: bool
    excluded_tickers: tuple[str, ...]
    checksum: str


def build_manifest(panel: PricePanel, price_path, classification_path,
                   excluded: tuple[str, ...] = ()) -> DataManifest:
    digest = hashlib.sha256()
    digest.update("\x1f".join(panel.tickers).encode("utf-8"))
    digest.update(np.ascontiguousarray(panel.dates).tobytes())
    for name in ("open", "close", "adj_open", "adj_close", "volume"):
        digest.update(np.ascontiguousarray(getattr(panel, name)).tobytes())
    return DataManifest(
        price_path=str(price_path),
        classification_path=str(classification_path),
        n_tickers=panel.n_stocks,
        n_dates=panel.n_dates,
        date_min=str(panel.dates[-1]),
        date_max=str(panel.dates[0]),
        adj_open_derived=panel.adj_open_derived,
        excluded_tickers=tuple(excluded),
        checksum=digest.hexdigest(),
    )


def write_manifest(manifest: DataManifest, path) -> None:
    lines = [
        f"price_path = {manifest.price_path}",
        f"classification_path = {manifest.classification_path}",
        f"n_tickers = {manifest.n_tickers}",
        f"n_dates = {manifest.n_dates}",
        f"date_min = {manifest.date_min}",
        f"date_max = {manifest.date_max}",
        f"adj_open_derived = {str(manifest.adj_open_derived).lower()}",
        f"excluded_tickers = {','.join(manifest.excluded_tickers)}",
        f"checksum = {manifest.checksum}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_key_value_file(path) -> dict[str, str]:
    """Parse a simple ``key = value`` text file ('#' starts a comment)."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
