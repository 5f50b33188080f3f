"""Factor-model covariance construction with nested embeddings.

The basic object is the one-level factor model

    Gamma = diag(specific variances) + loadings @ FCM @ loadings.T

where the factor covariance matrix (FCM) may itself be modeled by another,
smaller factor model, and so on.  A stack of such levels terminates in an
explicit small FCM, a single scalar variance (the "market" factor, loaded
through an intercept column), or nothing at all.  Flattening the stack gives
an equivalent single-level model whose FCM is block-diagonal: one diagonal
block of specific variances per intermediate level plus at most one dense
terminal block.

For binary industry classifications the covariance entry between two stocks
collapses to a closed form: the sum of the group variances of every level
the pair shares, plus the market variance, plus the stock's own variance on
the diagonal.  Modeling the *correlation* matrix this way with nonnegative
level weights summing to one gives a unit-diagonal, positive-definite model
with no covariance estimation at all; scaling by sample variances then
yields a full covariance model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .taxonomy import BinaryLoadings, ClassificationTree

__all__ = [
    "RiskModelError",
    "FactorModelLevel",
    "ExplicitFCM",
    "ScalarVariance",
    "NestedRiskModel",
    "FlatFactorModel",
    "gamma",
    "flatten",
    "expand_nested",
    "binary_gamma_entry",
    "binary_gamma_matrix",
    "heuristic_correlation_model",
    "scale_correlation_to_covariance",
    "correlation_from_covariance",
    "extend_with_style",
    "check_positive_definite",
    "PDReport",
    "market_variance_estimate",
    "EQUAL_COMPONENT_WEIGHTS",
    "IDIO_SUBINDUSTRY_SPLIT",
    "ModelSpec",
    "load_model_spec",
    "save_model_spec",
    "load_matrix_csv",
    "save_matrix_csv",
]

#: Every variance component carries the same weight: stock-specific risk,
#: each classification level, and the market factor.
EQUAL_COMPONENT_WEIGHTS = (0.2, 0.2, 0.2, 0.2, 0.2)

#: Crude two-component split: half idiosyncratic, half finest-group, no
#: coarser structure (a diagonal-FCM model after flattening).
IDIO_SUBINDUSTRY_SPLIT = (0.5, 0.5, 0.0, 0.0, 0.0)

_SYM_RTOL = 1e-10


class RiskModelError(ValueError):
    """A risk model violates its structural contract."""


Loadings = Union[np.ndarray, BinaryLoadings]


def _loadings_dense(loadings: Loadings) -> np.ndarray:
    if isinstance(loadings, BinaryLoadings):
        return loadings.to_dense()
    arr = np.asarray(loadings, dtype=np.float64)
    if arr.ndim != 2:
        raise RiskModelError(f"loadings must be a matrix, got shape {arr.shape}")
    return arr


def _loadings_shape(loadings: Loadings) -> tuple[int, int]:
    if isinstance(loadings, BinaryLoadings):
        return loadings.shape
    return loadings.shape  # validated 2-D in _loadings_dense


def _check_symmetric(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise RiskModelError(f"{what} must be square, got shape {mat.shape}")
    scale = float(np.abs(mat).max()) if mat.size else 0.0
    asym = float(np.abs(mat - mat.T).max()) if mat.size else 0.0
    if asym > _SYM_RTOL * max(scale, 1e-300):
        raise RiskModelError(
            f"{what} is not symmetric: max |M - M.T| = {asym:.3e} at scale {scale:.3e}"
        )
    return mat


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FactorModelLevel:
    """One level of a nested model: loadings plus per-row specific variances.

    The loadings map this level's rows to the next level's factors; the
    specific variances are this level's diagonal contribution.
    """

    loadings: Loadings
    specific_variances: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.loadings, BinaryLoadings):
            object.__setattr__(self, "loadings", _frozen(_loadings_dense(self.loadings).copy()))
        sv = np.asarray(self.specific_variances, dtype=np.float64)
        if sv.ndim != 1:
            raise RiskModelError("specific variances must be a vector")
        rows, _ = _loadings_shape(self.loadings)
        if sv.size != rows:
            raise RiskModelError(
                f"{sv.size} specific variances for {rows} loadings rows"
            )
        if sv.size and sv.min() < 0:
            bad = int(np.argmin(sv))
            raise RiskModelError(f"negative specific variance {sv[bad]} at index {bad}")
        object.__setattr__(self, "specific_variances", _frozen(sv.copy()))

    @property
    def rows(self) -> int:
        return _loadings_shape(self.loadings)[0]

    @property
    def cols(self) -> int:
        return _loadings_shape(self.loadings)[1]

    def loadings_dense(self) -> np.ndarray:
        return _loadings_dense(self.loadings)


@dataclass(frozen=True, eq=False)
class ExplicitFCM:
    """Terminal factor covariance matrix given explicitly (symmetric PSD)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        mat = _check_symmetric(self.matrix, "terminal FCM")
        eigs = np.linalg.eigvalsh((mat + mat.T) / 2.0)
        if eigs[0] < -1e-10 * max(abs(eigs[-1]), 1e-300):
            raise RiskModelError(
                f"terminal FCM is not positive-semidefinite (min eigenvalue {eigs[0]:.3e})"
            )
        object.__setattr__(self, "matrix", _frozen(mat.copy()))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ScalarVariance:
    """Terminal 1x1 factor covariance: the variance of a single factor."""

    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0:
            raise RiskModelError(f"scalar variance must be >= 0, got {self.value}")


Terminal = Union[ExplicitFCM, ScalarVariance, None]


def _terminal_matrix(terminal: Terminal) -> np.ndarray | None:
    if terminal is None:
        return None
    if isinstance(terminal, ScalarVariance):
        return np.array([[terminal.value]])
    return terminal.matrix


@dataclass(frozen=True, eq=False)
class NestedRiskModel:
    """A stack of factor-model levels, outermost (stocks) first.

    ``terminal`` is the factor covariance of the innermost level's factors:
    an :class:`ExplicitFCM`, a :class:`ScalarVariance` (the innermost level
    must then have exactly one factor column), or ``None`` for the
    zero-factor variant in which the innermost FCM vanishes and the
    flattened model's FCM is fully diagonal.
    """

    levels: tuple[FactorModelLevel, ...]
    terminal: Terminal = None

    def __post_init__(self) -> None:
        levels = tuple(self.levels)
        if not levels:
            raise RiskModelError("a nested model needs at least one level")
        object.__setattr__(self, "levels", levels)
        for upper, lower in zip(levels, levels[1:]):
            if upper.cols != lower.rows:
                raise RiskModelError(
                    f"level with {upper.cols} factors followed by level with "
                    f"{lower.rows} rows"
                )
        last = levels[-1]
        if isinstance(self.terminal, ScalarVariance) and last.cols != 1:
            raise RiskModelError(
                f"scalar terminal variance needs a single innermost factor, "
                f"the innermost level has {last.cols}"
            )
        if isinstance(self.terminal, ExplicitFCM) and self.terminal.size != last.cols:
            raise RiskModelError(
                f"terminal FCM is {self.terminal.size}x{self.terminal.size} but the "
                f"innermost level has {last.cols} factors"
            )

    @property
    def n_stocks(self) -> int:
        return self.levels[0].rows

    @classmethod
    def from_tree(
        cls,
        tree: ClassificationTree,
        specific_variances: Sequence,
        terminal: Terminal = None,
    ) -> "NestedRiskModel":
        """Binary-classification model with one level per tree level.

        ``specific_variances`` holds one scalar or vector per level.  If one
        extra entry is given, a final intercept-loaded level (a single
        "market" factor) is appended; the terminal must then be a
        :class:`ScalarVariance` or ``None``.
        """
        tree.validate().raise_if_invalid()
        p = tree.n_levels
        if len(specific_variances) not in (p, p + 1):
            raise RiskModelError(
                f"expected {p} or {p + 1} specific-variance entries, got "
                f"{len(specific_variances)}"
            )
        sizes = (tree.n_stocks,) + tree.cardinalities
        levels = []
        for lvl in range(p):
            sv = np.broadcast_to(np.asarray(specific_variances[lvl], dtype=np.float64), (sizes[lvl],))
            levels.append(FactorModelLevel(tree.level_loadings(lvl), sv))
        if len(specific_variances) == p + 1:
            if isinstance(terminal, ExplicitFCM):
                raise RiskModelError(
                    "an intercept market level terminates in a scalar variance or nothing"
                )
            last_card = tree.cardinalities[-1]
            sv = np.broadcast_to(
                np.asarray(specific_variances[p], dtype=np.float64), (last_card,)
            )
            levels.append(FactorModelLevel(np.ones((last_card, 1)), sv))
        return cls(tuple(levels), terminal)

    def expand_dense(self) -> np.ndarray:
        """Dense covariance by recursive substitution of each level's FCM."""
        fcm = _terminal_matrix(self.terminal)
        for level in reversed(self.levels):
            out = np.diag(level.specific_variances).astype(np.float64)
            if fcm is not None:
                w = level.loadings_dense()
                out = out + w @ fcm @ w.T
            fcm = out
        return fcm

    def flatten(self) -> "FlatFactorModel":
        return flatten(self)


@dataclass(frozen=True, eq=False)
class FlatFactorModel:
    """Single-level equivalent of a nested model.

    ``loadings`` concatenates the cumulative products of the nested levels'
    loadings; ``fcm`` is block-diagonal with the deeper levels' specific
    variances on the diagonal and at most one dense terminal block;
    ``specific_variances`` are the outermost level's.  ``block_dims`` records
    the factor count contributed by each block, for introspection.
    """

    loadings: np.ndarray
    fcm: np.ndarray
    specific_variances: np.ndarray
    block_dims: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        w = np.asarray(self.loadings, dtype=np.float64)
        if w.ndim != 2:
            raise RiskModelError(f"loadings must be a matrix, got shape {w.shape}")
        fcm = _check_symmetric(self.fcm, "flat FCM") if np.asarray(self.fcm).size else np.asarray(self.fcm, dtype=np.float64).reshape(0, 0)
        sv = np.asarray(self.specific_variances, dtype=np.float64)
        if sv.ndim != 1 or sv.size != w.shape[0]:
            raise RiskModelError("specific variances must be one per stock")
        if sv.size and sv.min() < 0:
            raise RiskModelError("negative specific variance")
        if fcm.shape[0] != w.shape[1]:
            raise RiskModelError(
                f"FCM is {fcm.shape[0]}x{fcm.shape[0]} for {w.shape[1]} factor columns"
            )
        if self.block_dims and sum(self.block_dims) != w.shape[1]:
            raise RiskModelError("block dims do not sum to the factor count")
        object.__setattr__(self, "loadings", _frozen(w.copy()))
        object.__setattr__(self, "fcm", _frozen(fcm.copy()))
        object.__setattr__(self, "specific_variances", _frozen(sv.copy()))
        object.__setattr__(self, "block_dims", tuple(int(b) for b in self.block_dims))

    @property
    def n_stocks(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def gamma_dense(self, max_dense: int = 4000) -> np.ndarray:
        """Materialize the full covariance matrix (guarded by ``max_dense``)."""
        n = self.n_stocks
        if n > max_dense:
            raise RiskModelError(
                f"refusing to materialize a {n}x{n} matrix (max_dense={max_dense}); "
                "use apply() or raise the cap"
            )
        out = self.loadings @ self.fcm @ self.loadings.T
        out = (out + out.T) / 2.0
        out[np.diag_indices(n)] += self.specific_variances
        return out

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Matrix-vector product with the implicit covariance."""
        v = np.asarray(vec, dtype=np.float64)
        core = self.loadings @ (self.fcm @ (self.loadings.T @ v))
        if v.ndim == 1:
            return self.specific_variances * v + core
        return self.specific_variances[:, None] * v + core

    def restrict(self, indices) -> "FlatFactorModel":
        """Model over a subset of stocks (rows); factor columns are kept."""
        idx = np.asarray(indices, dtype=np.intp)
        return FlatFactorModel(
            self.loadings[idx], self.fcm, self.specific_variances[idx], self.block_dims
        )

    def scaled_by_variances(self, sample_variances) -> "FlatFactorModel":
        """Two-sided scaling by sqrt of per-stock variances.

        Turns a correlation-space model into a covariance model whose
        diagonal matches ``sample_variances`` when the base diagonal is one.
        """
        c = np.asarray(sample_variances, dtype=np.float64)
        if c.shape != (self.n_stocks,):
            raise RiskModelError(f"need {self.n_stocks} variances, got shape {c.shape}")
        if c.size and c.min() <= 0:
            bad = int(np.argmin(c))
            raise RiskModelError(f"nonpositive variance {c[bad]} at index {bad}")
        s = np.sqrt(c)
        return FlatFactorModel(
            self.loadings * s[:, None], self.fcm, self.specific_variances * c, self.block_dims
        )


def gamma(level: FactorModelLevel, fcm: np.ndarray) -> np.ndarray:
    """One-level covariance: diag(specific) + loadings @ fcm @ loadings.T."""
    fcm = _check_symmetric(fcm, "FCM")
    if fcm.shape[0] != level.cols:
        raise RiskModelError(
            f"FCM is {fcm.shape[0]}x{fcm.shape[0]} for {level.cols} factors"
        )
    w = level.loadings_dense()
    out = w @ fcm @ w.T
    out = (out + out.T) / 2.0
    out[np.diag_indices(level.rows)] += level.specific_variances
    return out


def flatten(model: NestedRiskModel) -> FlatFactorModel:
    """Equivalent single-level model with block-diagonal FCM.

    The loadings blocks are the cumulative products of the nested loadings;
    each block's FCM sub-block is the *next* level's specific variances
    (diagonal), with the terminal FCM, when present, as the last block.
    """
    omega_blocks: list[np.ndarray] = []
    fcm_blocks: list[np.ndarray] = []
    cumulative: np.ndarray | None = None
    for depth, level in enumerate(model.levels):
        dense = level.loadings_dense()
        cumulative = dense if cumulative is None else cumulative @ dense
        if depth + 1 < len(model.levels):
            omega_blocks.append(cumulative)
            fcm_blocks.append(np.diag(model.levels[depth + 1].specific_variances))
    terminal = _terminal_matrix(model.terminal)
    if terminal is not None:
        omega_blocks.append(cumulative)
        fcm_blocks.append(terminal)
    n = model.n_stocks
    if omega_blocks:
        loadings = np.hstack(omega_blocks)
        m = loadings.shape[1]
        fcm = np.zeros((m, m))
        at = 0
        dims = []
        for block in fcm_blocks:
            k = block.shape[0]
            fcm[at : at + k, at : at + k] = block
            dims.append(k)
            at += k
    else:
        loadings = np.zeros((n, 0))
        fcm = np.zeros((0, 0))
        dims = []
    return FlatFactorModel(
        loadings, fcm, model.levels[0].specific_variances, tuple(dims)
    )


def expand_nested(model: NestedRiskModel) -> np.ndarray:
    """Dense covariance via recursive substitution (see ``expand_dense``)."""
    return model.expand_dense()


def _level_variances(tree: ClassificationTree, variances: Sequence):
    p = tree.n_levels
    if len(variances) != p + 2:
        raise RiskModelError(
            f"expected {p + 2} variance entries (idiosyncratic, one per level, market), "
            f"got {len(variances)}"
        )
    sizes = (tree.n_stocks,) + tree.cardinalities
    parts = []
    for k in range(p + 1):
        v = np.broadcast_to(np.asarray(variances[k], dtype=np.float64), (sizes[k],))
        if v.size and v.min() < 0:
            raise RiskModelError(f"negative variance in entry {k}")
        parts.append(v)
    x = float(variances[p + 1])
    if not np.isfinite(x) or x < 0:
        raise RiskModelError(f"market variance must be >= 0, got {variances[p + 1]}")
    return parts, x


def binary_gamma_entry(tree: ClassificationTree, variances: Sequence, i: int, j: int) -> float:
    """Closed-form covariance entry of the binary-classification model.

    ``variances`` holds the idiosyncratic entry (scalar or per-stock), one
    entry per tree level (scalar or per-group), and the market variance.
    The entry is the sum of the group variances at every level containing
    both stocks, plus the market variance, plus the idiosyncratic variance
    when ``i == j``.
    """
    parts, x = _level_variances(tree, variances)
    maps = tree.stock_group_maps()
    terms = []
    if i == j:
        terms.append(float(parts[0][i]))
    for depth in range(tree.n_levels):
        gi = maps[depth][i]
        if gi == maps[depth][j]:
            terms.append(float(parts[depth + 1][gi]))
    terms.append(x)
    return math.fsum(terms)


def binary_gamma_matrix(tree: ClassificationTree, variances: Sequence) -> np.ndarray:
    """Dense matrix of :func:`binary_gamma_entry` values.

    The diagonal is accumulated with compensated summation so that weight
    vectors summing to one give exactly unit diagonal.
    """
    parts, x = _level_variances(tree, variances)
    maps = tree.stock_group_maps()
    n = tree.n_stocks
    out = np.full((n, n), x, dtype=np.float64)
    for depth in range(tree.n_levels):
        g = maps[depth]
        v = parts[depth + 1][g]
        out += (g[:, None] == g[None, :]) * v[:, None]
    diag = [
        math.fsum(
            [float(parts[0][i])]
            + [float(parts[d + 1][maps[d][i]]) for d in range(tree.n_levels)]
            + [x]
        )
        for i in range(n)
    ]
    out[np.diag_indices(n)] = diag
    return out


def heuristic_correlation_model(
    tree: ClassificationTree, weights: Sequence[float] = EQUAL_COMPONENT_WEIGHTS
) -> NestedRiskModel:
    """Correlation-space nested model from per-level weights.

    ``weights`` assigns a nonnegative share of total variance to the
    idiosyncratic component, each classification level (finest first), and
    the market factor; the shares must sum to one (tolerance 1e-12).  The
    idiosyncratic share absorbs the floating-point rounding residual so the
    modeled diagonal is exactly one.  The market share terminates the stack
    as a scalar variance when positive, or nothing when zero.
    """
    w = [float(v) for v in weights]
    p = tree.n_levels
    if len(w) != p + 2:
        raise RiskModelError(
            f"expected {p + 2} weights (idiosyncratic, one per level, market), got {len(w)}"
        )
    if min(w) < 0:
        raise RiskModelError(f"weights must be nonnegative, got {w}")
    total = math.fsum(w)
    if abs(total - 1.0) > 1e-12:
        raise RiskModelError(f"weights must sum to 1, got {total!r}")
    rest = math.fsum(w[1:])
    w0 = 1.0 - rest
    if w0 < 0:
        raise RiskModelError(
            f"level and market weights sum to {rest!r} > 1; no room for idiosyncratic risk"
        )
    x = w[-1]
    terminal = ScalarVariance(x) if x > 0 else None
    return NestedRiskModel.from_tree(tree, [w0] + w[1:-1], terminal)


def scale_correlation_to_covariance(correlation: np.ndarray, sample_variances) -> np.ndarray:
    """Scale a correlation-space matrix by sqrt of per-stock variances.

    Entry (i, j) becomes sqrt(C_ii C_jj) * corr_ij; the diagonal is set to
    C_ii * corr_ii directly, so a unit-diagonal input reproduces the sample
    variances exactly.
    """
    corr = _check_symmetric(correlation, "correlation matrix")
    c = np.asarray(sample_variances, dtype=np.float64)
    if c.shape != (corr.shape[0],):
        raise RiskModelError(
            f"need {corr.shape[0]} variances, got shape {c.shape}"
        )
    bad = np.nonzero(~(c > 0))[0]
    if bad.size:
        raise RiskModelError(
            f"nonpositive sample variance {c[bad[0]]} at index {int(bad[0])}"
        )
    s = np.sqrt(c)
    out = corr * np.outer(s, s)
    out[np.diag_indices(corr.shape[0])] = c * np.diag(corr)
    return out


def correlation_from_covariance(covariance: np.ndarray) -> np.ndarray:
    """Inverse of :func:`scale_correlation_to_covariance`."""
    cov = _check_symmetric(covariance, "covariance matrix")
    d = np.diag(cov)
    if d.size and d.min() <= 0:
        raise RiskModelError("covariance diagonal must be positive")
    s = np.sqrt(d)
    out = cov / np.outer(s, s)
    out[np.diag_indices(cov.shape[0])] = 1.0
    return out


def extend_with_style(
    tree: ClassificationTree,
    style_loadings: np.ndarray,
    terminal_fcm: np.ndarray,
    idio_variances,
    sub_industry_variances,
    industry_variances,
) -> NestedRiskModel:
    """Three-level binary model augmented with dense style-factor columns.

    Style columns pass through every level unchanged (block-diagonal
    loadings with an identity style block and zero specific variance at the
    intermediate levels), so the terminal FCM covers sectors plus styles
    jointly: shape (n_sectors + n_styles) square.
    """
    tree.validate().raise_if_invalid()
    if tree.n_levels != 3:
        raise RiskModelError("style extension is defined for three-level trees")
    style = np.asarray(style_loadings, dtype=np.float64)
    if style.ndim != 2 or style.shape[0] != tree.n_stocks:
        raise RiskModelError(
            f"style loadings must be n_stocks x n_styles, got shape {style.shape}"
        )
    u = style.shape[1]
    k, f, l = tree.cardinalities
    if u == 0:
        return NestedRiskModel.from_tree(
            tree,
            [idio_variances, sub_industry_variances, industry_variances],
            ExplicitFCM(terminal_fcm),
        )
    fcm = _check_symmetric(terminal_fcm, "terminal FCM")
    if fcm.shape[0] != l + u:
        raise RiskModelError(
            f"terminal FCM must be {(l + u)}x{(l + u)} (sectors + styles), got {fcm.shape}"
        )

    def _block(binary: BinaryLoadings) -> np.ndarray:
        rows, cols = binary.shape
        out = np.zeros((rows + u, cols + u))
        out[:rows, :cols] = binary.to_dense()
        out[rows:, cols:] = np.eye(u)
        return out

    xi = np.broadcast_to(np.asarray(idio_variances, dtype=np.float64), (tree.n_stocks,))
    zeta = np.broadcast_to(np.asarray(sub_industry_variances, dtype=np.float64), (k,))
    eta = np.broadcast_to(np.asarray(industry_variances, dtype=np.float64), (f,))
    levels = (
        FactorModelLevel(np.hstack([tree.level_loadings(0).to_dense(), style]), xi),
        FactorModelLevel(_block(tree.level_loadings(1)), np.concatenate([zeta, np.zeros(u)])),
        FactorModelLevel(_block(tree.level_loadings(2)), np.concatenate([eta, np.zeros(u)])),
    )
    return NestedRiskModel(levels, ExplicitFCM(fcm))


@dataclass(frozen=True)
class PDReport:
    """Spectrum summary of a symmetric matrix with a pass/fail verdict."""

    min_eigenvalue: float
    max_eigenvalue: float
    threshold: float
    cholesky_ok: bool
    passed: bool


def check_positive_definite(matrix: np.ndarray, tolerance: float = -1e-10) -> PDReport:
    """Report the extreme eigenvalues and whether the matrix passes.

    ``passed`` requires min_eigenvalue > tolerance * max_eigenvalue; the
    default negative tolerance allows floating-point slack on a
    mathematically positive-definite input, while a positive tolerance makes
    the check strict.  Asymmetric input (beyond 1e-10 relative) is rejected.
    """
    mat = _check_symmetric(matrix, "matrix")
    sym = (mat + mat.T) / 2.0
    eigs = np.linalg.eigvalsh(sym)
    lo, hi = float(eigs[0]), float(eigs[-1])
    try:
        np.linalg.cholesky(sym)
        chol = True
    except np.linalg.LinAlgError:
        chol = False
    threshold = tolerance * hi
    return PDReport(lo, hi, threshold, chol, lo > threshold)


def market_variance_estimate(returns: np.ndarray, ddof: int = 1) -> float:
    """Variance of the equal-weighted cross-sectional mean return.

    ``returns`` is dates x stocks; missing entries (NaN) are skipped within
    each date, and dates with no data are dropped.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 2:
        raise RiskModelError("returns must be dates x stocks")
    with np.errstate(invalid="ignore"):
        market = np.nanmean(r, axis=1)
    market = market[np.isfinite(market)]
    if market.size < ddof + 1:
        raise RiskModelError("not enough dates to estimate the market variance")
    return float(np.var(market, ddof=ddof))


# -- model spec files and matrix CSV round-trip -------------------------

_TERMINAL_KINDS = ("scalar-x", "none", "explicit-fcm")


@dataclass(frozen=True)
class ModelSpec:
    """Parsed key-value model description.

    Keys: ``weights`` (comma- or space-separated shares), ``terminal``
    (scalar-x | none | explicit-fcm), ``fcm`` (CSV path, explicit-fcm only),
    ``style_loadings`` (CSV path, optional).
    """

    weights: tuple[float, ...] | None = None
    terminal: str = "scalar-x"
    fcm_path: str | None = None
    style_loadings_path: str | None = None

    def __post_init__(self) -> None:
        if self.terminal not in _TERMINAL_KINDS:
            raise RiskModelError(
                f"terminal must be one of {_TERMINAL_KINDS}, got {self.terminal!r}"
            )
        if self.terminal == "explicit-fcm" and not self.fcm_path:
            raise RiskModelError("terminal explicit-fcm needs an fcm path")


def _parse_kv_lines(text: str, where: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RiskModelError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise RiskModelError(f"{where}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_model_spec(path) -> ModelSpec:
    path = Path(path)
    entries = _parse_kv_lines(path.read_text(encoding="utf-8"), str(path))
    known = {"weights", "terminal", "fcm", "style_loadings"}
    unknown = set(entries) - known
    if unknown:
        raise RiskModelError(f"{path}: unknown keys {sorted(unknown)}")
    weights = None
    if "weights" in entries:
        weights = tuple(float(tok) for tok in entries["weights"].replace(",", " ").split())
    return ModelSpec(
        weights=weights,
        terminal=entries.get("terminal", "scalar-x"),
        fcm_path=entries.get("fcm"),
        style_loadings_path=entries.get("style_loadings"),
    )


def save_model_spec(spec: ModelSpec, path) -> None:
    lines = []
    if spec.weights is not None:
        lines.append("weights = " + ", ".join(format(w, ".17g") for w in spec.weights))
    lines.append(f"terminal = {spec.terminal}")
    if spec.fcm_path:
        lines.append(f"fcm = {spec.fcm_path}")
    if spec.style_loadings_path:
        lines.append(f"style_loadings = {spec.style_loadings_path}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    """Write a dense matrix as decimal CSV with 17 significant digits."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in mat:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise RiskModelError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)
