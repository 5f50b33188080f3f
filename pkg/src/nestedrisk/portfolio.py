"""Cross-sectional portfolio construction.

Two routes from a per-date return cross-section to dollar holdings:

* weighted regression: residuals of the returns over a loadings matrix
  (intercept, or a binary group block) with positive weights, turned into
  contrarian holdings proportional to minus the weighted residuals;
* constrained Sharpe maximization: the closed-form maximizer of
  expected-return-to-risk under the zero-net-dollars constraint, with the
  covariance applied either densely or through its factor structure
  (diagonal plus low-rank), inverted by the Woodbury identity.

Also here: diagnostics showing why identifying factor covariances and
specific variances with per-date regression moments fails to reproduce
in-sample total variances (only the trace matches).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .riskmodel import FlatFactorModel, RiskModelError

__all__ = [
    "NoTradeError",
    "SingularRegressionError",
    "RegressionSpec",
    "RegressionResult",
    "weighted_regression",
    "Holdings",
    "regression_holdings",
    "optimize_sharpe",
    "FactorModelInverse",
    "invert_factor_covariance",
    "FallacyReport",
    "fallacy_diagnostics",
]

logger = logging.getLogger(__name__)


class NoTradeError(RuntimeError):
    """The construction yields no position (degenerate signal)."""


class SingularRegressionError(ValueError):
    """The regression loadings are rank-deficient."""


def _dense_loadings(loadings) -> np.ndarray:
    if hasattr(loadings, "to_dense"):
        loadings = loadings.to_dense()
    arr = np.asarray(loadings, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"loadings must be a matrix, got shape {arr.shape}")
    return arr


def _dependent_columns(weighted_loadings: np.ndarray) -> list[int] | None:
    """Indices of columns that break full column rank, or None if full rank."""
    n, m = weighted_loadings.shape
    if m == 0 or n < m:
        return list(range(m)) if m else []
    r, piv = scipy.linalg.qr(weighted_loadings, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, m) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank == m:
        return None
    return sorted(int(c) for c in piv[rank:])


@dataclass(frozen=True, eq=False)
class RegressionSpec:
    """Loadings and positive weights for one cross-sectional regression."""

    loadings: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = _dense_loadings(self.loadings)
        object.__setattr__(self, "loadings", y)
        if self.weights is not None:
            z = np.asarray(self.weights, dtype=np.float64)
            if z.shape != (y.shape[0],):
                raise ValueError(
                    f"weights shape {z.shape} does not match {y.shape[0]} rows"
                )
            if not np.all(z > 0):
                bad = int(np.argmin(z))
                raise ValueError(f"regression weights must be positive (weight {z[bad]} at {bad})")
            object.__setattr__(self, "weights", z)

    def resolved_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.loadings.shape[0])
        return self.weights


@dataclass(frozen=True, eq=False)
class RegressionResult:
    residuals: np.ndarray
    factor_returns: np.ndarray


def weighted_regression(returns: np.ndarray, spec: RegressionSpec) -> RegressionResult:
    """Weighted least squares of a return cross-section on loadings.

    Returns residuals satisfying the weighted orthogonality
    loadings.T @ diag(weights) @ residuals = 0, together with the fitted
    factor returns.  Rank-deficient loadings raise
    :class:`SingularRegressionError` naming the dependent columns.
    """
    r = np.asarray(returns, dtype=np.float64)
    y = spec.loadings
    if r.shape != (y.shape[0],):
        raise ValueError(f"returns shape {r.shape} does not match {y.shape[0]} rows")
    z = spec.resolved_weights()
    sq = np.sqrt(z)[:, None] * y
    dependent = _dependent_columns(sq)
    if dependent is not None:
        raise SingularRegressionError(
            f"loadings columns {dependent} are linearly dependent on the rest; "
            "drop duplicated blocks (e.g. an intercept alongside a complete binary block)"
        )
    q = sq.T @ sq
    f = np.linalg.solve(q, y.T @ (z * r))
    return RegressionResult(residuals=r - y @ f, factor_returns=f)


@dataclass(frozen=True, eq=False)
class Holdings:
    """Signed dollar positions normalized to a gross investment level."""

    dollars: np.ndarray
    investment: float

    def __post_init__(self) -> None:
        h = np.asarray(self.dollars, dtype=np.float64)
        object.__setattr__(self, "dollars", h)
        if not self.investment > 0:
            raise ValueError(f"investment level must be positive, got {self.investment}")

    @property
    def gross(self) -> float:
        return float(np.abs(self.dollars).sum())

    @property
    def net(self) -> float:
        return float(self.dollars.sum())


def regression_holdings(residuals: np.ndarray, weights: np.ndarray, investment: float) -> Holdings:
    """Contrarian holdings from weighted residuals.

    Positions are proportional to minus weights * residuals, scaled so the
    gross (long plus short) equals ``investment``.  The net is zero whenever
    the intercept lies in the regression loadings' column span.
    """
    eps = np.asarray(residuals, dtype=np.float64)
    z = np.asarray(weights, dtype=np.float64)
    signal = z * eps
    total = float(np.abs(signal).sum())
    if total <= 0 or not np.isfinite(total):
        raise NoTradeError("all residuals are zero; nothing to trade")
    return Holdings(-signal * (investment / total), investment)


class FactorModelInverse:
    """Applies the inverse of diag(d) + W @ phi @ W.T to vectors.

    Uses the low-rank update identity, reducing each application to one
    m x m solve (m = factor count).  A numerically singular small system
    falls back to dense Cholesky with a logged warning.
    """

    def __init__(self, model: FlatFactorModel):
        d = model.specific_variances
        if d.size == 0:
            raise RiskModelError("empty model")
        if d.min() <= 0:
            bad = int(np.argmin(d))
            raise RiskModelError(
                f"inverse needs strictly positive specific variances "
                f"(value {d[bad]} at index {bad})"
            )
        self.n = model.n_stocks
        self._d = d
        self._w = model.loadings
        self._phi = model.fcm
        self._dense_cho = None
        self._lu = None
        m = model.n_factors
        if m:
            dinv_w = self._w / d[:, None]
            small = np.eye(m) + self._phi @ (self._w.T @ dinv_w)
            lu, piv = scipy.linalg.lu_factor(small, check_finite=False)
            pivots = np.abs(np.diag(lu))
            if pivots.min() <= max(m, 1) * np.finfo(np.float64).eps * max(pivots.max(), 1.0):
                logger.warning(
                    "factor system is numerically singular (degenerate FCM); "
                    "falling back to dense inversion"
                )
                try:
                    self._dense_cho = scipy.linalg.cho_factor(model.gamma_dense())
                except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                    raise RiskModelError(f"covariance is not positive-definite: {exc}") from exc
            else:
                self._lu = (lu, piv)
                self._dinv_w = dinv_w

    def solve(self, vec: np.ndarray) -> np.ndarray:
        """Inverse-covariance times a vector (or stacked columns)."""
        v = np.asarray(vec, dtype=np.float64)
        if v.shape[0] != self.n:
            raise ValueError(f"vector length {v.shape[0]} does not match {self.n} stocks")
        if self._dense_cho is not None:
            return scipy.linalg.cho_solve(self._dense_cho, v)
        x = v / self._d if v.ndim == 1 else v / self._d[:, None]
        if self._lu is None:
            return x
        t = self._phi @ (self._w.T @ x)
        return x - self._dinv_w @ scipy.linalg.lu_solve(self._lu, t)


def invert_factor_covariance(model: FlatFactorModel) -> FactorModelInverse:
    """Implicit inverse of a flattened factor-model covariance."""
    return FactorModelInverse(model)


def _inverse_solver(covariance):
    if isinstance(covariance, FactorModelInverse):
        return covariance.solve, covariance.n
    if isinstance(covariance, FlatFactorModel):
        op = FactorModelInverse(covariance)
        return op.solve, op.n
    mat = np.asarray(covariance, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"covariance must be square, got shape {mat.shape}")
    try:
        cho = scipy.linalg.cho_factor((mat + mat.T) / 2.0)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ValueError(f"covariance is not positive-definite: {exc}") from exc
    return (lambda v: scipy.linalg.cho_solve(cho, v)), mat.shape[0]


def optimize_sharpe(expected_returns: np.ndarray, covariance, investment: float) -> Holdings:
    """Closed-form max-Sharpe holdings under the zero-net-dollars constraint.

    The direction is inv(cov) @ e minus its projection on inv(cov) @ ones,
    rescaled so gross equals ``investment`` with the positive orientation
    (long the high-expected-return side).  ``covariance`` may be a dense
    matrix, a :class:`FlatFactorModel`, or a prebuilt
    :class:`FactorModelInverse`.  Expected returns proportional to the ones
    vector leave no direction and raise :class:`NoTradeError`.
    """
    e = np.asarray(expected_returns, dtype=np.float64)
    if e.ndim != 1:
        raise ValueError("expected returns must be a vector")
    solve, n = _inverse_solver(covariance)
    if e.size != n:
        raise ValueError(f"{e.size} expected returns for {n} stocks")
    rhs = np.column_stack([e, np.ones(n)])
    sol = solve(rhs)
    u, v = sol[:, 0], sol[:, 1]
    denom = float(v.sum())
    if denom <= 0:
        raise ValueError("ones-vector solve is not positive; covariance is not PD")
    direction = u - v * (float(u.sum()) / denom)
    gross = float(np.abs(direction).sum())
    scale = max(float(np.abs(u).max()), float(np.abs(v).max()), 1e-300)
    if gross <= 1e-12 * scale * n:
        raise NoTradeError("expected returns are proportional to the ones vector")
    return Holdings(direction * (investment / gross), investment)


@dataclass(frozen=True, eq=False)
class FallacyReport:
    """Why per-date regression moments cannot define a factor model.

    ``total_variance_gap`` is the per-stock difference between the modeled
    total variance under the naive identification (residual variance as
    specific, factor-return covariance as FCM) and the in-sample variance;
    ``naive_specific_variances`` is what forcing the diagonal to match would
    assign as specific variances, some of which go negative.  Only the trace
    identity survives.
    """

    n_dates: int
    n_stocks: int
    n_factors: int
    projector_symmetry_error: float
    projector_idempotency_error: float
    trace_model: float
    trace_sample: float
    total_variance_gap: np.ndarray
    naive_specific_variances: np.ndarray

    @property
    def trace_relative_error(self) -> float:
        scale = max(abs(self.trace_sample), 1e-300)
        return abs(self.trace_model - self.trace_sample) / scale

    @property
    def n_negative_specific(self) -> int:
        return int((self.naive_specific_variances < 0).sum())


def fallacy_diagnostics(returns_panel: np.ndarray, loadings) -> FallacyReport:
    """Unit-weight per-date regressions and the moment (mis)identification.

    ``returns_panel`` is dates x stocks.  Factor returns and residuals come
    from the unweighted regression each date; their time-series covariances
    are then compared against the sample covariance of the returns.
    """
    r = np.asarray(returns_panel, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError("returns panel must be dates x stocks")
    t, n = r.shape
    if t < 2:
        raise ValueError(f"need at least 2 dates, got {t}")
    y = _dense_loadings(loadings)
    if y.shape[0] != n:
        raise ValueError(f"loadings rows {y.shape[0]} do not match {n} stocks")
    dependent = _dependent_columns(y)
    if dependent is not None:
        raise SingularRegressionError(
            f"loadings columns {dependent} are linearly dependent on the rest"
        )
    gram = y.T @ y
    projector = y @ np.linalg.solve(gram, y.T)
    sym_err = float(np.abs(projector - projector.T).max())
    idem_err = float(np.abs(projector @ projector - projector).max())

    factor_returns = np.linalg.solve(gram, y.T @ r.T).T  # dates x factors
    residuals = r - factor_returns @ y.T

    sample_cov = np.cov(r, rowvar=False, ddof=1).reshape(n, n)
    resid_cov = np.cov(residuals, rowvar=False, ddof=1).reshape(n, n)
    fac_cov = np.cov(factor_returns, rowvar=False, ddof=1).reshape(y.shape[1], y.shape[1])

    factor_diag = np.einsum("ia,ab,ib->i", y, fac_cov, y)
    trace_model = float(np.trace(resid_cov) + np.trace(fac_cov @ gram))
    naive_total = np.diag(resid_cov) + factor_diag
    return FallacyReport(
        n_dates=t,
        n_stocks=n,
        n_factors=y.shape[1],
        projector_symmetry_error=sym_err,
        projector_idempotency_error=idem_err,
        trace_model=trace_model,
        trace_sample=float(np.trace(sample_cov)),
        total_variance_gap=naive_total - np.diag(sample_cov),
        naive_specific_variances=np.diag(sample_cov) - factor_diag,
    )
