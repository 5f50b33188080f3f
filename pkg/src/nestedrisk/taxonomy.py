"""Hierarchical industry classifications and binary factor loadings.

A classification tree assigns every stock to exactly one group at each level
of a hierarchy such as sector -> industry -> sub-industry (finest level
first).  Each level map induces a binary loadings matrix with exactly one
unit entry per row, and composing maps down the tree yields the loadings of
the coarser levels.  Groups are dense 0-based indices; string labels, when
present, ride along for reporting only.

Trees are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TaxonomyError",
    "BinaryLoadings",
    "binary_loadings",
    "ClassificationTree",
    "ValidationReport",
    "validate_tree",
    "compose",
    "DEFAULT_LEVEL_NAMES",
]

DEFAULT_LEVEL_NAMES = ("sub_industry", "industry", "sector")


class TaxonomyError(ValueError):
    """A classification tree violates its structural contract."""


def _as_int_map(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise TaxonomyError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise TaxonomyError(f"{name} must contain integer group indices")
    return arr.astype(np.intp, copy=True)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BinaryLoadings:
    """One-hot assignment matrix: entry (i, a) equals 1 iff ``assignment[i] == a``.

    Every row has exactly one unit entry, so row sums are identically 1 and
    the all-ones vector lies in the column span (the intercept is subsumed).
    """

    assignment: np.ndarray
    cols: int

    def __post_init__(self) -> None:
        arr = _as_int_map(self.assignment, "assignment")
        if self.cols < 1:
            raise TaxonomyError(f"cols must be >= 1, got {self.cols}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.cols):
            bad = int(np.argmax((arr < 0) | (arr >= self.cols)))
            raise TaxonomyError(
                f"assignment value {arr[bad]} at row {bad} out of range [0, {self.cols})"
            )
        object.__setattr__(self, "assignment", _frozen(arr))
        object.__setattr__(self, "cols", int(self.cols))

    @property
    def rows(self) -> int:
        return int(self.assignment.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype)
        out[np.arange(self.rows), self.assignment] = 1
        return out

    def compose(self, other: "BinaryLoadings") -> "BinaryLoadings":
        """Matrix product with another binary loadings matrix (again binary)."""
        if self.cols != other.rows:
            raise TaxonomyError(
                f"cannot compose {self.shape} loadings with {other.shape} loadings"
            )
        return BinaryLoadings(other.assignment[self.assignment], other.cols)

    def __matmul__(self, other):
        if isinstance(other, BinaryLoadings):
            return self.compose(other)
        return self.to_dense() @ other


def binary_loadings(assignment, cols: int | None = None, rows: int | None = None) -> BinaryLoadings:
    """Build a :class:`BinaryLoadings` from a row -> column assignment map.

    ``cols`` defaults to ``max(assignment) + 1``.  ``rows``, if given, is
    checked against the map length.
    """
    arr = _as_int_map(assignment, "assignment")
    if rows is not None and rows != arr.size:
        raise TaxonomyError(f"expected {rows} rows, assignment has {arr.size}")
    if cols is None:
        if arr.size == 0:
            raise TaxonomyError("cols must be given for an empty assignment")
        cols = int(arr.max()) + 1
    return BinaryLoadings(arr, cols)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of structural validation of a classification tree."""

    ok: bool
    issues: tuple[str, ...]
    declared_cardinalities: tuple[int, ...]
    effective_cardinalities: tuple[int, ...] | None

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise TaxonomyError("; ".join(self.issues))


@dataclass(frozen=True, eq=False)
class ClassificationTree:
    """Maps from stocks to nested group levels, finest level first.

    ``level_maps[0]`` sends each stock to its finest group (sub-industry);
    ``level_maps[l]`` for ``l >= 1`` sends each level-``l`` group to its
    parent at level ``l+1``.  ``cardinalities[l]`` is the number of groups
    at level ``l``.  Three levels named sub_industry/industry/sector are the
    documented default; any positive number of levels is supported.
    """

    level_maps: tuple[np.ndarray, ...]
    cardinalities: tuple[int, ...]
    level_names: tuple[str, ...]
    tickers: tuple[str, ...] | None = None
    labels: tuple[tuple[str, ...], ...] | None = None

    @classmethod
    def from_maps(
        cls,
        level_maps: Sequence[Sequence[int]],
        cardinalities: Sequence[int] | None = None,
        level_names: Sequence[str] | None = None,
        tickers: Sequence[str] | None = None,
        labels: Sequence[Sequence[str]] | None = None,
        validate: bool = True,
    ) -> "ClassificationTree":
        """Construct a tree from level maps, optionally validating it.

        With ``validate=True`` (the default) a structurally invalid tree
        (out-of-range indices, empty groups, length mismatches) raises
        :class:`TaxonomyError`.  ``validate=False`` builds the raw object so
        it can be inspected via :func:`validate_tree` or repaired via
        :meth:`compacted`.
        """
        if not level_maps:
            raise TaxonomyError("at least one level map is required")
        maps = tuple(_frozen(_as_int_map(m, f"level map {i}")) for i, m in enumerate(level_maps))
        if cardinalities is None:
            cardinalities = tuple(int(m.max()) + 1 if m.size else 0 for m in maps)
        cards = tuple(int(c) for c in cardinalities)
        if len(cards) != len(maps):
            raise TaxonomyError(
                f"{len(maps)} level maps but {len(cards)} cardinalities"
            )
        if level_names is None:
            if len(maps) == 3:
                level_names = DEFAULT_LEVEL_NAMES
            else:
                level_names = tuple(f"level{i + 1}" for i in range(len(maps)))
        tree = cls(
            level_maps=maps,
            cardinalities=cards,
            level_names=tuple(level_names),
            tickers=tuple(tickers) if tickers is not None else None,
            labels=tuple(tuple(l) for l in labels) if labels is not None else None,
        )
        if validate:
            tree.validate().raise_if_invalid()
        return tree

    # -- basic shape ---------------------------------------------------

    @property
    def n_stocks(self) -> int:
        return int(self.level_maps[0].size)

    @property
    def n_levels(self) -> int:
        return len(self.level_maps)

    def _require_three_levels(self) -> None:
        if self.n_levels != 3:
            raise TaxonomyError(
                f"named level accessors need a 3-level tree, this one has {self.n_levels}"
            )

    @property
    def n_sub_industries(self) -> int:
        self._require_three_levels()
        return self.cardinalities[0]

    @property
    def n_industries(self) -> int:
        self._require_three_levels()
        return self.cardinalities[1]

    @property
    def n_sectors(self) -> int:
        self._require_three_levels()
        return self.cardinalities[2]

    @property
    def sub_industry_of(self) -> np.ndarray:
        """Per-stock finest-group index."""
        self._require_three_levels()
        return self.level_maps[0]

    @property
    def industry_of(self) -> np.ndarray:
        """Per-sub-industry industry index."""
        self._require_three_levels()
        return self.level_maps[1]

    @property
    def sector_of(self) -> np.ndarray:
        """Per-industry sector index."""
        self._require_three_levels()
        return self.level_maps[2]

    # -- derived structure ---------------------------------------------

    def stock_group_maps(self) -> tuple[np.ndarray, ...]:
        """Cumulative stock -> group maps, one per level (finest first)."""
        out = [self.level_maps[0]]
        for m in self.level_maps[1:]:
            out.append(m[out[-1]])
        return tuple(_frozen(a.copy()) for a in out)

    def loadings(self, level: int) -> BinaryLoadings:
        """Binary stock -> level-``level`` group loadings (0 = finest)."""
        return BinaryLoadings(self.stock_group_maps()[level], self.cardinalities[level])

    def level_loadings(self, level: int) -> BinaryLoadings:
        """Binary loadings of the raw map at ``level`` (group -> parent group)."""
        return BinaryLoadings(self.level_maps[level], self.cardinalities[level])

    def validate(self) -> ValidationReport:
        return validate_tree(self)

    def compacted(self) -> "ClassificationTree":
        """Renumber groups densely, dropping any not reachable from a stock.

        Relative order of surviving indices is preserved.  Raises on
        out-of-range values, which cannot be repaired by renumbering.
        """
        issues = _range_issues(self)
        if issues:
            raise TaxonomyError("; ".join(issues))
        new_maps: list[np.ndarray] = []
        new_cards: list[int] = []
        new_labels: list[tuple[str, ...]] | None = [] if self.labels is not None else None
        rows = self.level_maps[0]
        for lvl in range(self.n_levels):
            used = np.unique(rows)
            remap = np.full(self.cardinalities[lvl], -1, dtype=np.intp)
            remap[used] = np.arange(used.size, dtype=np.intp)
            new_maps.append(remap[rows])
            new_cards.append(int(used.size))
            if new_labels is not None:
                labels_lvl = self.labels[lvl]
                new_labels.append(tuple(labels_lvl[g] for g in used))
            if lvl + 1 < self.n_levels:
                rows = self.level_maps[lvl + 1][used]
        return ClassificationTree.from_maps(
            new_maps,
            new_cards,
            level_names=self.level_names,
            tickers=self.tickers,
            labels=new_labels,
            validate=True,
        )

    def restrict_stocks(self, indices) -> "ClassificationTree":
        """Tree over a subset of stocks, with unused groups compacted away."""
        idx = np.asarray(indices, dtype=np.intp)
        maps = [self.level_maps[0][idx]] + [m for m in self.level_maps[1:]]
        tickers = None
        if self.tickers is not None:
            tickers = tuple(self.tickers[i] for i in idx)
        raw = ClassificationTree.from_maps(
            maps,
            self.cardinalities,
            level_names=self.level_names,
            tickers=tickers,
            labels=self.labels,
            validate=False,
        )
        return raw.compacted()


def _name_row(tree: ClassificationTree, level: int, row: int) -> str:
    if level == 0:
        if tree.tickers is not None and row < len(tree.tickers):
            return f"stock {tree.tickers[row]!r}"
        return f"stock {row}"
    return f"{tree.level_names[level - 1]} group {row}"


def _range_issues(tree: ClassificationTree) -> list[str]:
    issues = []
    for lvl, m in enumerate(tree.level_maps):
        card = tree.cardinalities[lvl]
        if card < 1:
            issues.append(f"{tree.level_names[lvl]} level declares {card} groups")
            continue
        bad = np.nonzero((m < 0) | (m >= card))[0]
        for row in bad[:8]:
            issues.append(
                f"{tree.level_names[lvl]} map: value {m[row]} out of range "
                f"[0, {card}) at {_name_row(tree, lvl, int(row))}"
            )
        if bad.size > 8:
            issues.append(f"{tree.level_names[lvl]} map: {bad.size - 8} more out-of-range values")
    return issues


def validate_tree(tree: ClassificationTree) -> ValidationReport:
    """Structurally validate a tree: totality, ranges, and no empty groups.

    The report carries the effective cardinalities after compacting unused
    indices; a valid tree has effective == declared.
    """
    issues: list[str] = []
    for lvl in range(1, tree.n_levels):
        expected = tree.cardinalities[lvl - 1]
        got = tree.level_maps[lvl].size
        if got != expected:
            issues.append(
                f"{tree.level_names[lvl]} map has {got} entries, expected one per "
                f"{tree.level_names[lvl - 1]} group ({expected})"
            )
    if tree.n_stocks == 0:
        issues.append("tree has no stocks")
    if tree.labels is not None:
        for lvl, labels in enumerate(tree.labels):
            if len(labels) != tree.cardinalities[lvl]:
                issues.append(
                    f"{tree.level_names[lvl]} has {len(labels)} labels for "
                    f"{tree.cardinalities[lvl]} groups"
                )
    if issues:
        return ValidationReport(False, tuple(issues), tree.cardinalities, None)

    issues.extend(_range_issues(tree))
    if issues:
        return ValidationReport(False, tuple(issues), tree.cardinalities, None)

    effective: list[int] = []
    rows = tree.level_maps[0]
    for lvl in range(tree.n_levels):
        used = np.unique(rows)
        effective.append(int(used.size))
        missing = np.setdiff1d(np.arange(tree.cardinalities[lvl]), used)
        if missing.size:
            shown = ", ".join(str(g) for g in missing[:8])
            more = f" (+{missing.size - 8} more)" if missing.size > 8 else ""
            issues.append(
                f"empty {tree.level_names[lvl]} groups: {shown}{more}"
            )
        if lvl + 1 < tree.n_levels:
            rows = tree.level_maps[lvl + 1][used]
    return ValidationReport(not issues, tuple(issues), tree.cardinalities, tuple(effective))


def compose(tree: ClassificationTree) -> tuple[np.ndarray, ...]:
    """Composed stock -> group maps for every level above the finest.

    For the standard three-level tree this returns the stock -> industry
    and stock -> sector maps.
    """
    tree.validate().raise_if_invalid()
    return tree.stock_group_maps()[1:]
