"""Synthetic fixtures: random classification trees and planted-structure panels.

The panel generator plants a three-level group structure in overnight
returns (market + sector + industry + sub-industry + idiosyncratic shocks)
and makes the intraday move revert against the idiosyncratic shock alone.
Strategies that hedge the group components out of the signal therefore see
a cleaner alpha, which is what the horse race is designed to expose.
"""

from __future__ import annotations

import numpy as np

from .backtest import PricePanel
from .taxonomy import ClassificationTree

__all__ = ["random_tree", "mean_reverting_panel", "horse_race_fixture"]


def _surjective_map(rng: np.random.Generator, size: int, groups: int) -> np.ndarray:
    if groups > size:
        raise ValueError(f"cannot map {size} items onto {groups} nonempty groups")
    base = np.concatenate([
        np.arange(groups, dtype=np.intp),
        rng.integers(0, groups, size - groups, dtype=np.intp),
    ])
    return rng.permutation(base)


def random_tree(
    rng: np.random.Generator,
    n_stocks: int,
    n_sub_industries: int | None = None,
    n_industries: int | None = None,
    n_sectors: int | None = None,
) -> ClassificationTree:
    """Random valid three-level tree with surjective maps at every level."""
    if n_sub_industries is None:
        n_sub_industries = int(rng.integers(1, max(2, n_stocks // 2) + 1))
    if n_industries is None:
        n_industries = int(rng.integers(1, n_sub_industries + 1))
    if n_sectors is None:
        n_sectors = int(rng.integers(1, n_industries + 1))
    tickers = tuple(f"S{i:04d}" for i in range(n_stocks))
    labels = (
        tuple(f"SUB{k:03d}" for k in range(n_sub_industries)),
        tuple(f"IND{a:03d}" for a in range(n_industries)),
        tuple(f"SEC{x:02d}" for x in range(n_sectors)),
    )
    return ClassificationTree.from_maps(
        [
            _surjective_map(rng, n_stocks, n_sub_industries),
            _surjective_map(rng, n_sub_industries, n_industries),
            _surjective_map(rng, n_industries, n_sectors),
        ],
        tickers=tickers,
        labels=labels,
    )


def mean_reverting_panel(
    tree: ClassificationTree,
    n_days: int,
    rng: np.random.Generator,
    component_vol: float = 0.009,
    idio_spread: float = 0.35,
    reversion: float = 0.6,
    intraday_noise: float = 0.004,
    start_date: str = "2019-01-01",
) -> PricePanel:
    """Price panel whose overnight shocks partially revert intraday.

    Overnight log returns are the sum of independent market, sector,
    industry, sub-industry, and idiosyncratic normal shocks, each with
    standard deviation ``component_vol`` (the idiosyncratic one varies per
    stock by ``idio_spread``).  The intraday log move is ``-reversion``
    times the idiosyncratic shock plus noise.  Prices back out from the
    returns; adjusted and unadjusted series coincide (no corporate actions).
    """
    if tree.n_levels != 3:
        raise ValueError("the planted panel needs a three-level tree")
    n = tree.n_stocks
    sub, ind, sec = tree.stock_group_maps()
    k, f, l = tree.cardinalities

    idio_scale = 1.0 + idio_spread * (rng.uniform(-1.0, 1.0, n))
    dates = np.datetime64(start_date, "D") + np.arange(n_days)

    close = np.empty((n_days, n))
    open_ = np.empty((n_days, n))
    close[0] = rng.uniform(20.0, 80.0, n)
    open_[0] = close[0]
    for t in range(1, n_days):
        market = rng.normal(0.0, component_vol)
        sector_shock = rng.normal(0.0, component_vol, l)[sec]
        industry_shock = rng.normal(0.0, component_vol, f)[ind]
        sub_shock = rng.normal(0.0, component_vol, k)[sub]
        idio = rng.normal(0.0, component_vol, n) * idio_scale
        overnight = market + sector_shock + industry_shock + sub_shock + idio
        intraday = -reversion * idio + rng.normal(0.0, intraday_noise, n)
        open_[t] = close[t - 1] * np.exp(overnight)
        close[t] = open_[t] * np.exp(intraday)

    base_volume = 10.0 ** rng.uniform(5.0, 7.0, n)
    volume = np.rint(base_volume * rng.uniform(0.8, 1.25, (n_days, n)))

    return PricePanel.from_chronological(
        tickers=tree.tickers if tree.tickers is not None else tuple(f"S{i:04d}" for i in range(n)),
        dates=dates,
        open=open_,
        close=close,
        adj_open=open_.copy(),
        adj_close=close.copy(),
        volume=volume,
    )


def horse_race_fixture(seed: int = 20140905, n_stocks: int = 500,
                       n_days: int = 504) -> tuple[PricePanel, ClassificationTree]:
    """The standard planted-structure fixture: 500 stocks, two years."""
    rng = np.random.default_rng(seed)
    n_sub = max(min(60, n_stocks // 6), 1)
    n_ind = max(n_sub // 3, 1)
    n_sec = max(n_ind // 3, 1)
    tree = random_tree(rng, n_stocks, n_sub_industries=n_sub, n_industries=n_ind,
                       n_sectors=n_sec)
    panel = mean_reverting_panel(tree, n_days, rng)
    return panel, tree
