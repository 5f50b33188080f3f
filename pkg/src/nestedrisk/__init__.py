"""Nested multi-factor equity risk models.

Covariance matrices built from hierarchical factor models (each level's
factor covariance modeled by the next, smaller level), binary
industry-classification specializations, portfolio construction by weighted
cross-sectional regression or closed-form constrained Sharpe maximization,
and an intraday mean-reversion backtest harness to race them.
"""

from .taxonomy import (
    BinaryLoadings,
    ClassificationTree,
    TaxonomyError,
    ValidationReport,
    binary_loadings,
    compose,
    validate_tree,
)
from .riskmodel import (
    EQUAL_COMPONENT_WEIGHTS,
    IDIO_SUBINDUSTRY_SPLIT,
    ExplicitFCM,
    FactorModelLevel,
    FlatFactorModel,
    ModelSpec,
    NestedRiskModel,
    PDReport,
    RiskModelError,
    ScalarVariance,
    binary_gamma_entry,
    binary_gamma_matrix,
    check_positive_definite,
    correlation_from_covariance,
    expand_nested,
    extend_with_style,
    flatten,
    gamma,
    heuristic_correlation_model,
    load_matrix_csv,
    load_model_spec,
    market_variance_estimate,
    save_matrix_csv,
    save_model_spec,
    scale_correlation_to_covariance,
)
from .portfolio import (
    FactorModelInverse,
    FallacyReport,
    Holdings,
    NoTradeError,
    RegressionResult,
    RegressionSpec,
    SingularRegressionError,
    fallacy_diagnostics,
    invert_factor_covariance,
    optimize_sharpe,
    regression_holdings,
    weighted_regression,
)
from .backtest import (
    BacktestConfig,
    BacktestError,
    BacktestReport,
    Metrics,
    PricePanel,
    ReturnsPanel,
    Strategy,
    StrategyResult,
    TABLE_STRATEGIES,
    addv,
    metrics,
    overnight_returns,
    run_backtest,
    select_universe,
    trailing_variance,
)
from .data_io import (
    DataError,
    DataManifest,
    build_manifest,
    load_classification,
    load_prices,
    read_metrics_csv,
    write_classification_csv,
    write_classification_mapping,
    write_manifest,
    write_prices_csv,
    write_report,
)

__version__ = "0.1.0"
