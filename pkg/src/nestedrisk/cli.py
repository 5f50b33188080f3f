"""Command-line interface: backtest, model-check, demo-fallacy.

Options can come from a ``key = value`` config file, with command-line flags
taking precedence.  The resolved configuration is echoed verbatim into the
output directory so every run is reproducible from its artifacts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .backtest import (
    BacktestConfig,
    BacktestError,
    Strategy,
    TABLE_STRATEGIES,
    overnight_returns,
    run_backtest,
)
from .data_io import (
    DataError,
    build_manifest,
    load_classification,
    load_prices,
    read_key_value_file,
    write_classification_mapping,
    write_manifest,
    write_report,
)
from .portfolio import fallacy_diagnostics
from .riskmodel import (
    EQUAL_COMPONENT_WEIGHTS,
    RiskModelError,
    binary_gamma_entry,
    check_positive_definite,
    expand_nested,
    heuristic_correlation_model,
)
from .taxonomy import TaxonomyError

logger = logging.getLogger(__name__)

_CONFIG_KEYS = (
    "data", "classification", "out", "lookback", "universe_size",
    "investment", "weights", "strategies", "jobs", "signal_delay",
)


def _parse_weights(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _parse_strategies(text: str) -> tuple[Strategy, ...]:
    return tuple(Strategy.parse(tok) for tok in text.split(",") if tok.strip())


def _resolve_backtest_options(args) -> dict:
    options: dict[str, str] = {}
    if args.config:
        entries = read_key_value_file(args.config)
        unknown = set(entries) - set(_CONFIG_KEYS)
        if unknown:
            raise DataError(f"{args.config}: unknown config keys {sorted(unknown)}")
        options.update(entries)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = str(value)
    for key in ("data", "classification", "out"):
        if key not in options:
            raise DataError(f"missing required option {key!r} (flag or config file)")
    return options


def _cmd_backtest(args) -> int:
    options = _resolve_backtest_options(args)
    weights = _parse_weights(options.get("weights", "")) if "weights" in options else EQUAL_COMPONENT_WEIGHTS
    strategies = (
        _parse_strategies(options["strategies"]) if "strategies" in options else TABLE_STRATEGIES
    )
    strategies = tuple(
        s if s.kind != "optimization" else Strategy(kind="optimization", level=s.level,
                                                    weighted=s.weighted, model_weights=weights)
        for s in strategies
    )
    config = BacktestConfig(
        lookback=int(options.get("lookback", 21)),
        universe_size=int(options.get("universe_size", 2000)),
        investment=float(options.get("investment", 20e6)),
        strategies=strategies,
        signal_delay=int(options.get("signal_delay", 0)),
        jobs=int(options.get("jobs", 1)),
    )

    panel = load_prices(options["data"])
    tree, excluded = load_classification(options["classification"], panel.tickers)
    if excluded:
        panel = panel.restrict_tickers(tree.tickers)
    manifest = build_manifest(panel, options["data"], options["classification"], excluded)

    report = run_backtest(config, panel, tree)

    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    paths = write_report(report, out)
    write_manifest(manifest, out / "manifest.txt")
    write_classification_mapping(tree, out / "classification_mapping.csv")
    resolved = {**{"weights": ",".join(format(w, ".17g") for w in weights),
                   "strategies": ",".join(s.name for s in strategies)},
                **{k: options[k] for k in options if k not in ("weights", "strategies")}}
    (out / "run_config.txt").write_text(
        "".join(f"{k} = {resolved[k]}\n" for k in sorted(resolved)), encoding="utf-8"
    )

    print(f"{'strategy':<24}{'ROC':>10}{'SR':>8}{'CPS':>8}")
    for name, m in report.metrics_rows():
        sr = f"{m.sharpe:.2f}" if m.sharpe is not None else "n/a"
        cps = f"{m.cents_per_share:.2f}" if m.cents_per_share is not None else "n/a"
        print(f"{name:<24}{m.roc * 100:>9.2f}%{sr:>8}{cps:>8}")
    print(f"reports written to {paths['metrics'].parent}")
    return 0


def _cmd_model_check(args) -> int:
    weights = _parse_weights(args.weights) if args.weights else EQUAL_COMPONENT_WEIGHTS
    tree, _ = load_classification(args.classification)
    k, f, l = tree.cardinalities
    print(f"tree: {tree.n_stocks} stocks, {k} sub-industries, {f} industries, {l} sectors")

    model = heuristic_correlation_model(tree, weights)
    nested = expand_nested(model)
    flat_model = model.flatten()
    flat = flat_model.gamma_dense(max_dense=args.max_dense)
    deviation = float(np.abs(nested - flat).max())
    scale = max(float(np.abs(nested).max()), 1.0)
    flatten_ok = deviation <= 1e-12 * scale
    print(f"flatten vs nested expansion: max deviation {deviation:.3e} "
          f"({'ok' if flatten_ok else 'FAIL'})")

    pd_report = check_positive_definite(flat)
    print(f"min eigenvalue {pd_report.min_eigenvalue:.6e} "
          f"(threshold {pd_report.threshold:.3e}, "
          f"{'ok' if pd_report.passed else 'FAIL'})")

    # the model rebalances the idiosyncratic share by the rounding residual
    effective = (float(flat_model.specific_variances[0]), *[float(w) for w in weights[1:]])
    diag_ok = all(
        binary_gamma_entry(tree, effective, i, i) == 1.0 for i in range(tree.n_stocks)
    )
    print(f"unit diagonal: {'ok' if diag_ok else 'FAIL'}")
    return 0 if (flatten_ok and pd_report.passed and diag_ok) else 1


def _cmd_demo_fallacy(args) -> int:
    panel = load_prices(args.data)
    tree, excluded = load_classification(args.classification, panel.tickers)
    if excluded:
        panel = panel.restrict_tickers(tree.tickers)
    returns = overnight_returns(panel)
    complete = np.all(np.isfinite(returns.values), axis=0)
    if not complete.any():
        raise DataError("no stocks with a complete return history")
    kept = np.nonzero(complete)[0]
    if kept.size < complete.size:
        print(f"dropping {complete.size - kept.size} stocks with incomplete returns")
    sub_tree = tree.restrict_stocks(kept)
    depth = {"sub-industry": 0, "industry": 1, "sector": 2}[args.level]
    loadings = sub_tree.loadings(depth)
    panel_values = returns.values[:, kept]

    rep = fallacy_diagnostics(panel_values, loadings)
    print(f"{rep.n_dates} dates x {rep.n_stocks} stocks, {rep.n_factors} factors ({args.level})")
    proj_ok = (rep.projector_symmetry_error <= 1e-10
               and rep.projector_idempotency_error <= 1e-10)
    print(f"projector: symmetry error {rep.projector_symmetry_error:.2e}, "
          f"idempotency error {rep.projector_idempotency_error:.2e} "
          f"({'ok' if proj_ok else 'FAIL'})")
    trace_ok = rep.trace_relative_error <= 1e-8
    print(f"trace identity: model {rep.trace_model:.6e} vs sample {rep.trace_sample:.6e}, "
          f"relative error {rep.trace_relative_error:.2e} ({'ok' if trace_ok else 'FAIL'})")
    gap = rep.total_variance_gap
    print("per-stock total-variance gap (model - sample): "
          f"min {gap.min():.3e}, median {np.median(gap):.3e}, max {gap.max():.3e}")
    print(f"nonzero gaps: {int(np.sum(np.abs(gap) > 1e-15))} of {rep.n_stocks}")
    print(f"negative naive specific variances: {rep.n_negative_specific} of {rep.n_stocks}")
    return 0 if (proj_ok and trace_ok) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestedrisk",
        description="Nested factor risk models: backtests, model checks, diagnostics.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    bt = sub.add_parser("backtest", help="run the strategy horse race over a price panel")
    bt.add_argument("--config", help="key = value config file; flags override it")
    bt.add_argument("--data", help="price CSV (date,ticker,open,close,adj_open,adj_close,volume)")
    bt.add_argument("--classification", help="classification CSV (ticker,sector,industry,sub_industry)")
    bt.add_argument("--out", help="output directory")
    bt.add_argument("--lookback", type=int, help="trailing window in days (default 21)")
    bt.add_argument("--universe-size", dest="universe_size", type=int,
                    help="top names by dollar volume (default 2000)")
    bt.add_argument("--investment", type=float, help="gross dollar level (default 2e7)")
    bt.add_argument("--weights", help="correlation-model weights, e.g. 0.2,0.2,0.2,0.2,0.2")
    bt.add_argument("--strategies",
                    help="comma list: intercept,sector,industry,sub-industry[,-unit],optimization")
    bt.add_argument("--jobs", type=int, help="parallel strategy workers (default 1)")
    bt.add_argument("--signal-delay", dest="signal_delay", type=int, choices=(0, 1),
                    help="0: same-day open in signal and fill (default); 1: lag a day")
    bt.set_defaults(func=_cmd_backtest)

    mc = sub.add_parser("model-check", help="validate the correlation model on a classification")
    mc.add_argument("--classification", required=True)
    mc.add_argument("--weights", help="level weights (default equal fifths)")
    mc.add_argument("--max-dense", dest="max_dense", type=int, default=4000)
    mc.set_defaults(func=_cmd_model_check)

    df = sub.add_parser("demo-fallacy",
                        help="show why regression moments cannot define a factor model")
    df.add_argument("--data", required=True)
    df.add_argument("--classification", required=True)
    df.add_argument("--level", choices=("sub-industry", "industry", "sector"),
                    default="sub-industry")
    df.set_defaults(func=_cmd_demo_fallacy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, TaxonomyError, RiskModelError, BacktestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
