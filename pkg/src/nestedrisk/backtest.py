"""Intraday mean-reversion backtest harness.

Protocol: positions are established at the open and liquidated at the close
of the same day, with no transaction costs or slippage.  The signal is the
overnight (prior close to today's open, fully adjusted) return; holdings
come either from a weighted cross-sectional regression at a chosen
neutrality level or from constrained Sharpe maximization under the
correlation-space factor model scaled by trailing sample variances.

Time is indexed the way the data is stored: row 0 is the most recent date
and the index grows into the past.  Every quantity used on a date, from the
tradable universe (top names by average daily dollar volume) to regression
weights and trailing variances, is computed from strictly earlier dates and
refreshed only on a fixed interval (monthly by default) to avoid churning
the universe.  The sole same-day input is the adjusted open in the signal,
which is also the fill price ("delay 0"); set ``signal_delay=1`` to lag the
signal a day instead.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .portfolio import (
    NoTradeError,
    RegressionSpec,
    invert_factor_covariance,
    optimize_sharpe,
    regression_holdings,
    weighted_regression,
)
from .riskmodel import EQUAL_COMPONENT_WEIGHTS, heuristic_correlation_model
from .taxonomy import ClassificationTree

__all__ = [
    "BacktestError",
    "PricePanel",
    "ReturnsPanel",
    "overnight_returns",
    "addv",
    "select_universe",
    "trailing_variance",
    "Strategy",
    "TABLE_STRATEGIES",
    "BacktestConfig",
    "Metrics",
    "metrics",
    "StrategyResult",
    "BacktestReport",
    "run_backtest",
    "TRADING_DAYS_PER_YEAR",
]

logger = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252

REGRESSION_LEVELS = ("intercept", "sector", "industry", "sub_industry")


class BacktestError(ValueError):
    """Inconsistent inputs or configuration for a simulation."""


def _panel_array(values, name: str, n_dates: int, n_stocks: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (n_dates, n_stocks):
        raise BacktestError(
            f"{name} must have shape ({n_dates}, {n_stocks}), got {arr.shape}"
        )
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _check_positive(arr: np.ndarray, name: str, dates: np.ndarray, tickers) -> None:
    bad = np.nonzero(~np.isnan(arr) & (arr <= 0))
    if bad[0].size:
        d, t = int(bad[0][0]), int(bad[1][0])
        raise BacktestError(
            f"nonpositive {name} price {arr[d, t]} for {tickers[t]!r} on {dates[d]}"
        )


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Aligned per-stock price and volume history, most recent date first.

    Prices must be positive and volumes nonnegative wherever present; NaN
    marks a missing (ticker, date) observation and is never filled in.
    """

    tickers: tuple[str, ...]
    dates: np.ndarray
    open: np.ndarray
    close: np.ndarray
    adj_open: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    adj_open_derived: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tickers", tuple(self.tickers))
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if dates.ndim != 1 or dates.size < 1:
            raise BacktestError("dates must be a nonempty vector")
        if dates.size > 1 and not np.all(dates[:-1] > dates[1:]):
            raise BacktestError("dates must be strictly decreasing (row 0 most recent)")
        dates = dates.copy()
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        nd, ns = dates.size, len(self.tickers)
        for name in ("open", "close", "adj_open", "adj_close", "volume"):
            object.__setattr__(self, name, _panel_array(getattr(self, name), name, nd, ns))
        for name in ("open", "close", "adj_open", "adj_close"):
            _check_positive(getattr(self, name), name, dates, self.tickers)
        vol = self.volume
        bad = np.nonzero(~np.isnan(vol) & (vol < 0))
        if bad[0].size:
            d, t = int(bad[0][0]), int(bad[1][0])
            raise BacktestError(
                f"negative volume {vol[d, t]} for {self.tickers[t]!r} on {dates[d]}"
            )

    @property
    def n_dates(self) -> int:
        return int(self.dates.size)

    @property
    def n_stocks(self) -> int:
        return len(self.tickers)

    @classmethod
    def from_chronological(cls, tickers, dates, open, close, adj_open, adj_close, volume,
                           adj_open_derived: bool = False) -> "PricePanel":
        """Build from oldest-first arrays (rows are flipped into place)."""
        flip = lambda a: np.asarray(a)[::-1]
        return cls(
            tuple(tickers), flip(dates), flip(open), flip(close),
            flip(adj_open), flip(adj_close), flip(volume), adj_open_derived,
        )

    def restrict_tickers(self, keep) -> "PricePanel":
        """Panel over a subset of tickers, preserving their current order."""
        keep = set(keep)
        idx = np.array([i for i, t in enumerate(self.tickers) if t in keep], dtype=np.intp)
        return PricePanel(
            tuple(self.tickers[i] for i in idx),
            self.dates,
            self.open[:, idx],
            self.close[:, idx],
            self.adj_open[:, idx],
            self.adj_close[:, idx],
            self.volume[:, idx],
            self.adj_open_derived,
        )


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    """Per-stock overnight returns aligned to the price panel's newest dates."""

    tickers: tuple[str, ...]
    dates: np.ndarray
    values: np.ndarray

    @property
    def n_dates(self) -> int:
        return int(self.dates.size)


def overnight_returns(panel: PricePanel) -> ReturnsPanel:
    """Log return from the prior adjusted close to the same-day adjusted open.

    The oldest date of the panel has no prior close, so the result has one
    fewer row.  Missing inputs yield NaN, never zero.
    """
    if panel.n_dates < 2:
        raise BacktestError("need at least 2 dates to form overnight returns")
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.log(panel.adj_open[:-1] / panel.adj_close[1:])
    values.setflags(write=False)
    return ReturnsPanel(panel.tickers, panel.dates[:-1], values)


def addv(panel: PricePanel, date_index: int, lookback: int) -> np.ndarray:
    """Average daily dollar volume over the ``lookback`` days before a date.

    Strictly uses the window of older dates, never the date itself.  Stocks
    with any missing price or volume in the window come back NaN.
    """
    if lookback < 1:
        raise BacktestError(f"lookback must be >= 1, got {lookback}")
    if date_index < 0 or date_index + lookback >= panel.n_dates:
        raise BacktestError(
            f"date index {date_index} needs {lookback} earlier dates, panel has "
            f"{panel.n_dates}"
        )
    window = slice(date_index + 1, date_index + 1 + lookback)
    return (panel.volume[window] * panel.close[window]).mean(axis=0)


def select_universe(addv_values: np.ndarray, top_n: int) -> np.ndarray:
    """Indices of the ``top_n`` stocks by dollar volume, in input order.

    Ties at the cutoff are broken by original input order (stable).  Stocks
    without a defined value are excluded; if fewer than ``top_n`` remain,
    they are all taken with a warning.
    """
    if top_n < 1:
        raise BacktestError(f"top_n must be >= 1, got {top_n}")
    values = np.asarray(addv_values, dtype=np.float64)
    eligible = np.nonzero(np.isfinite(values))[0]
    if eligible.size == 0:
        raise BacktestError("no stocks with a defined dollar volume")
    if eligible.size < top_n:
        logger.warning(
            "only %d stocks have a defined dollar volume, requested top %d; taking all",
            eligible.size, top_n,
        )
    order = np.argsort(-values[eligible], kind="stable")
    return np.sort(eligible[order[:top_n]])


def trailing_variance(returns: ReturnsPanel, date_index: int, lookback: int) -> np.ndarray:
    """Unbiased sample variance of the ``lookback`` returns before a date.

    NaN for stocks missing any return in the window; exactly constant
    returns give 0, which callers must treat as untradable (the inverse
    variance weight would blow up).
    """
    if lookback < 2:
        raise BacktestError(f"variance needs lookback >= 2, got {lookback}")
    if date_index < 0 or date_index + lookback >= returns.n_dates + 1:
        raise BacktestError(
            f"date index {date_index} needs {lookback} earlier returns, have "
            f"{returns.n_dates}"
        )
    window = returns.values[date_index + 1 : date_index + 1 + lookback]
    return window.var(axis=0, ddof=1)


# -- strategies ----------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """One horse in the race.

    ``kind`` is "regression" (residual alpha at a neutrality level, holdings
    from the weighted residuals) or "optimization" (max-Sharpe holdings from
    the scaled correlation-model covariance).  ``level`` names the loadings
    for the regression, or, for optimization, the level whose residuals
    serve as expected returns.  ``weighted`` selects inverse-variance versus
    unit regression weights; optimization conventionally uses unit weights
    for its expected returns.
    """

    kind: str = "regression"
    level: str = "sub_industry"
    weighted: bool = True
    model_weights: tuple[float, ...] = EQUAL_COMPONENT_WEIGHTS

    def __post_init__(self) -> None:
        if self.kind not in ("regression", "optimization"):
            raise BacktestError(f"unknown strategy kind {self.kind!r}")
        if self.level not in REGRESSION_LEVELS:
            raise BacktestError(
                f"unknown level {self.level!r}, expected one of {REGRESSION_LEVELS}"
            )
        if self.kind == "optimization" and self.level == "intercept":
            raise BacktestError("optimization expected returns need a group level")
        object.__setattr__(self, "model_weights", tuple(float(w) for w in self.model_weights))

    @property
    def name(self) -> str:
        if self.kind == "optimization":
            return "optimization" + ("" if not self.weighted else "-weighted")
        return self.level.replace("_", "-") + ("" if self.weighted else "-unit")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        token = text.strip().lower().replace("_", "-")
        if token in ("optimization", "opt"):
            return cls(kind="optimization", weighted=False)
        if token == "optimization-weighted":
            return cls(kind="optimization", weighted=True)
        unit = token.endswith("-unit")
        if unit:
            token = token[: -len("-unit")]
        level = token.replace("-", "_")
        if level not in REGRESSION_LEVELS:
            raise BacktestError(f"cannot parse strategy {text!r}")
        return cls(kind="regression", level=level, weighted=not unit)


#: The standard five-way comparison: four weighted regression alphas from
#: loosest to tightest neutrality, plus the optimized alpha.
TABLE_STRATEGIES = (
    Strategy(kind="regression", level="intercept"),
    Strategy(kind="regression", level="sector"),
    Strategy(kind="regression", level="industry"),
    Strategy(kind="regression", level="sub_industry"),
    Strategy(kind="optimization", weighted=False),
)


@dataclass(frozen=True)
class BacktestConfig:
    lookback: int = 21
    universe_size: int = 2000
    interval_days: int = 21
    investment: float = 20e6
    strategies: tuple[Strategy, ...] = TABLE_STRATEGIES
    signal_delay: int = 0
    jobs: int = 1
    keep_holdings: bool = True

    def __post_init__(self) -> None:
        if self.lookback < 2:
            raise BacktestError(f"lookback must be >= 2, got {self.lookback}")
        if self.universe_size < 1:
            raise BacktestError(f"universe_size must be >= 1, got {self.universe_size}")
        if self.interval_days < 1:
            raise BacktestError(f"interval_days must be >= 1, got {self.interval_days}")
        if not self.investment > 0:
            raise BacktestError(f"investment must be positive, got {self.investment}")
        if self.signal_delay not in (0, 1):
            raise BacktestError(f"signal_delay must be 0 or 1, got {self.signal_delay}")
        if self.jobs < 1:
            raise BacktestError(f"jobs must be >= 1, got {self.jobs}")
        if not self.strategies:
            raise BacktestError("at least one strategy is required")
        object.__setattr__(self, "strategies", tuple(self.strategies))
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise BacktestError(f"duplicate strategy names in {names}")


# -- metrics -------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Annualized return on capital, annualized Sharpe ratio, cents per share.

    ``roc`` is a fraction (1.0 means 100% a year).  ``sharpe`` is None when
    the daily P&L is constant (zero standard deviation); ``cents_per_share``
    is None when nothing traded.
    """

    roc: float
    sharpe: float | None
    cents_per_share: float | None


def metrics(pnl: np.ndarray, shares: np.ndarray, investment: float) -> Metrics:
    pnl = np.asarray(pnl, dtype=np.float64)
    shares = np.asarray(shares, dtype=np.float64)
    if pnl.size == 0:
        raise BacktestError("empty P&L series")
    if not investment > 0:
        raise BacktestError("investment must be positive")
    mean = float(pnl.mean())
    roc = mean / investment * TRADING_DAYS_PER_YEAR
    sd = float(pnl.std(ddof=1)) if pnl.size > 1 else 0.0
    sharpe = mean / sd * math.sqrt(TRADING_DAYS_PER_YEAR) if sd > 0 else None
    total_shares = float(shares.sum())
    cps = 100.0 * float(pnl.sum()) / total_shares if total_shares > 0 else None
    return Metrics(roc=roc, sharpe=sharpe, cents_per_share=cps)


# -- the runner ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StrategyResult:
    """Per-date series for one strategy, oldest date first."""

    strategy: Strategy
    dates: np.ndarray
    pnl: np.ndarray
    shares: np.ndarray
    gross: np.ndarray
    net: np.ndarray
    n_no_trade: int
    holdings: tuple | None = None  # per date: (stock indices, dollar positions)

    @property
    def name(self) -> str:
        return self.strategy.name

    def compute_metrics(self, investment: float) -> Metrics:
        return metrics(self.pnl, self.shares, investment)


@dataclass(frozen=True, eq=False)
class BacktestReport:
    config: BacktestConfig
    dates: np.ndarray
    results: tuple[StrategyResult, ...]

    def metrics_rows(self) -> list[tuple[str, Metrics]]:
        return [(r.name, r.compute_metrics(self.config.investment)) for r in self.results]


@dataclass(frozen=True, eq=False)
class _Interval:
    date_indices: tuple[int, ...]  # panel/return rows, oldest first within the interval
    universe: np.ndarray
    variances: np.ndarray
    inv_variances: np.ndarray
    group_maps: tuple[np.ndarray, ...]
    present_masks: tuple[np.ndarray, ...]  # per date: universe stocks with data today


def _build_intervals(config: BacktestConfig, panel: PricePanel,
                     returns: ReturnsPanel, tree: ClassificationTree) -> list[_Interval]:
    d = config.lookback
    delay = config.signal_delay
    newest_tradable = 0
    oldest_tradable = returns.n_dates - 1 - d
    if oldest_tradable < newest_tradable:
        raise BacktestError(
            f"insufficient history: {panel.n_dates} dates with lookback {d} leave no "
            "tradable dates"
        )
    all_maps = tree.stock_group_maps()
    intervals: list[_Interval] = []
    start = oldest_tradable
    while start >= newest_tradable:
        stop = max(start - config.interval_days + 1, newest_tradable)
        date_indices = tuple(range(start, stop - 1, -1))  # oldest first
        anchor = start
        dollar_volume = addv(panel, anchor, d)
        universe = select_universe(dollar_volume, config.universe_size)
        variances = trailing_variance(returns, anchor, d)[universe]
        tradable = np.isfinite(variances) & (variances > 0)
        n_dropped = int(universe.size - tradable.sum())
        if n_dropped:
            logger.info(
                "interval anchored at %s: dropped %d universe stocks without a usable "
                "trailing variance", panel.dates[anchor], n_dropped,
            )
        universe = universe[tradable]
        variances = variances[tradable]
        masks = []
        for s in date_indices:
            present = (
                np.isfinite(panel.open[s, universe])
                & np.isfinite(panel.close[s, universe])
                & np.isfinite(returns.values[s + delay, universe])
            )
            missing = int(universe.size - present.sum())
            if missing:
                logger.info(
                    "%s: dropped %d universe stocks with missing prices or returns",
                    panel.dates[s], missing,
                )
            masks.append(present)
        intervals.append(
            _Interval(
                date_indices=date_indices,
                universe=universe,
                variances=variances,
                inv_variances=1.0 / variances,
                group_maps=tuple(m[universe] for m in all_maps),
                present_masks=tuple(masks),
            )
        )
        start = stop - 1
    return intervals


def _group_loadings(groups: np.ndarray) -> np.ndarray:
    """One-hot matrix over the groups present (empty columns never appear)."""
    _, inverse = np.unique(groups, return_inverse=True)
    out = np.zeros((groups.size, int(inverse.max()) + 1))
    out[np.arange(groups.size), inverse] = 1.0
    return out


_LEVEL_DEPTH = {"sub_industry": 0, "industry": 1, "sector": 2}


def _run_strategy(strategy: Strategy, config: BacktestConfig, panel: PricePanel,
                  returns: ReturnsPanel, tree: ClassificationTree,
                  intervals: list[_Interval], flat_models: dict) -> StrategyResult:
    inv = config.investment
    delay = config.signal_delay
    depth_of = lambda level: _LEVEL_DEPTH[level]
    flat_corr = flat_models.get(strategy.model_weights) if strategy.kind == "optimization" else None

    dates_out: list = []
    pnl_out: list[float] = []
    shares_out: list[float] = []
    gross_out: list[float] = []
    net_out: list[float] = []
    holdings_out: list = [] if config.keep_holdings else None
    n_no_trade = 0

    for interval in intervals:
        uni = interval.universe
        for k, s in enumerate(interval.date_indices):
            dates_out.append(panel.dates[s])
            open_s = panel.open[s, uni]
            close_s = panel.close[s, uni]
            signal = returns.values[s + delay, uni]
            present = interval.present_masks[k]
            holdings = None
            if int(present.sum()) >= 2:
                idx = uni[present]
                r_sig = signal[present]
                z = interval.inv_variances[present]
                c = interval.variances[present]
                try:
                    if strategy.kind == "regression":
                        if strategy.level == "intercept":
                            loadings = np.ones((idx.size, 1))
                        else:
                            groups = interval.group_maps[depth_of(strategy.level)][present]
                            loadings = _group_loadings(groups)
                        w = z if strategy.weighted else np.ones(idx.size)
                        fit = weighted_regression(
                            r_sig, RegressionSpec(loadings, w if strategy.weighted else None)
                        )
                        holdings = regression_holdings(fit.residuals, w, inv)
                    else:
                        groups = interval.group_maps[depth_of(strategy.level)][present]
                        spec = RegressionSpec(
                            _group_loadings(groups), z if strategy.weighted else None
                        )
                        expected = -weighted_regression(r_sig, spec).residuals
                        scaled = flat_corr.restrict(idx).scaled_by_variances(c)
                        holdings = optimize_sharpe(
                            expected, invert_factor_covariance(scaled), inv
                        )
                except NoTradeError:
                    holdings = None
            if holdings is None:
                n_no_trade += 1
                pnl_out.append(0.0)
                shares_out.append(0.0)
                gross_out.append(0.0)
                net_out.append(0.0)
                if holdings_out is not None:
                    holdings_out.append((np.empty(0, dtype=np.intp), np.empty(0)))
                continue
            h = holdings.dollars
            pnl_out.append(float((h * (close_s[present] / open_s[present] - 1.0)).sum()))
            shares_out.append(float((2.0 * np.abs(h) / open_s[present]).sum()))
            gross_out.append(holdings.gross)
            net_out.append(holdings.net)
            if holdings_out is not None:
                holdings_out.append((idx.copy(), h.copy()))

    return StrategyResult(
        strategy=strategy,
        dates=np.asarray(dates_out, dtype="datetime64[D]"),
        pnl=np.asarray(pnl_out),
        shares=np.asarray(shares_out),
        gross=np.asarray(gross_out),
        net=np.asarray(net_out),
        n_no_trade=n_no_trade,
        holdings=tuple(holdings_out) if holdings_out is not None else None,
    )


def run_backtest(config: BacktestConfig, panel: PricePanel,
                 tree: ClassificationTree) -> BacktestReport:
    """Run every configured strategy over the same dates and universes.

    The panel and tree must be aligned: one tree row per panel ticker, in
    panel order.  Universe membership, inverse-variance weights, and the
    optimizer's covariance scaling are refreshed once per interval from the
    window of strictly earlier dates; within an interval they are reused
    unchanged.  Dates where a stock is missing a price drop that stock from
    the cross-section for the day.
    """
    tree.validate().raise_if_invalid()
    if tree.n_stocks != panel.n_stocks:
        raise BacktestError(
            f"panel has {panel.n_stocks} tickers but the tree covers {tree.n_stocks}"
        )
    needs_groups = any(
        s.kind == "optimization" or s.level != "intercept" for s in config.strategies
    )
    if needs_groups and tree.n_levels != 3:
        raise BacktestError(
            "group-level strategies need a three-level tree "
            "(sub-industry / industry / sector)"
        )
    returns = overnight_returns(panel)
    intervals = _build_intervals(config, panel, returns, tree)
    flat_models = {}
    for strategy in config.strategies:
        if strategy.kind == "optimization" and strategy.model_weights not in flat_models:
            flat_models[strategy.model_weights] = heuristic_correlation_model(
                tree, strategy.model_weights
            ).flatten()

    runner = lambda s: _run_strategy(s, config, panel, returns, tree, intervals, flat_models)
    if config.jobs > 1 and len(config.strategies) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = tuple(pool.map(runner, config.strategies))
    else:
        results = tuple(runner(s) for s in config.strategies)
    return BacktestReport(config=config, dates=results[0].dates, results=results)
