import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestedrisk.synthetic import random_tree
from nestedrisk.taxonomy import (
    ClassificationTree,
    TaxonomyError,
    binary_loadings,
    compose,
    validate_tree,
)


class TestBinaryLoadings:
    def test_kronecker_delta_definition(self):
        m = binary_loadings([0, 0, 1], cols=2)
        assert np.array_equal(m.to_dense(), [[1, 0], [1, 0], [0, 1]])

    def test_identity_case(self):
        m = binary_loadings([0], cols=1)
        assert np.array_equal(m.to_dense(), [[1]])

    def test_permutation_case(self):
        m = binary_loadings([1, 0], cols=2)
        assert np.array_equal(m.to_dense(), [[0, 1], [1, 0]])

    def test_row_sums_are_one(self, rng):
        m = binary_loadings(rng.integers(0, 5, 40), cols=5)
        assert np.array_equal(m.to_dense().sum(axis=1), np.ones(40))

    def test_out_of_range_rejected(self):
        with pytest.raises(TaxonomyError, match="out of range"):
            binary_loadings([0, 3], cols=2)

    def test_rows_check(self):
        with pytest.raises(TaxonomyError, match="rows"):
            binary_loadings([0, 1], cols=2, rows=3)


class TestValidateTree:
    def test_valid_tree_passes(self):
        tree = ClassificationTree.from_maps(
            [[0, 0, 1], [0, 1], [0, 0]], cardinalities=[2, 2, 1]
        )
        report = validate_tree(tree)
        assert report.ok and not report.issues
        assert report.effective_cardinalities == (2, 2, 1)

    def test_empty_groups_reported(self):
        tree = ClassificationTree.from_maps(
            [[0, 0], [0, 0, 0], [0]], cardinalities=[3, 1, 1], validate=False
        )
        report = validate_tree(tree)
        assert not report.ok
        assert any("empty sub_industry" in issue for issue in report.issues)
        assert report.effective_cardinalities == (1, 1, 1)
        with pytest.raises(TaxonomyError):
            report.raise_if_invalid()

    def test_out_of_range_is_structural_error(self):
        tree = ClassificationTree.from_maps(
            [[0, 0], [0, 4]], cardinalities=[2, 2], validate=False,
            level_names=("sub_industry", "industry"),
        )
        report = validate_tree(tree)
        assert not report.ok
        assert any("value 4 out of range" in issue for issue in report.issues)

    def test_constructor_validates_by_default(self):
        with pytest.raises(TaxonomyError):
            ClassificationTree.from_maps([[0, 0], [0, 4]], cardinalities=[2, 2])

    def test_compacted_repairs_gaps(self):
        tree = ClassificationTree.from_maps(
            [[0, 2, 2], [0, 1, 1], [1, 1]], cardinalities=[3, 2, 2], validate=False
        )
        fixed = tree.compacted()
        assert fixed.validate().ok
        assert fixed.cardinalities == (2, 2, 1)
        # relative order of surviving groups is preserved
        assert np.array_equal(fixed.level_maps[0], [0, 1, 1])
        assert np.array_equal(fixed.level_maps[2], [0, 0])

    def test_effective_cardinalities_non_increasing(self, rng):
        for _ in range(20):
            tree = random_tree(rng, int(rng.integers(3, 40)))
            eff = validate_tree(tree).effective_cardinalities
            assert eff is not None
            assert tree.n_stocks >= eff[0] >= eff[1] >= eff[2] >= 1


class TestCompose:
    def test_function_composition(self):
        tree = ClassificationTree.from_maps([[0, 1, 2], [0, 0, 1], [0, 0]])
        industry_of_stock, sector_of_stock = compose(tree)
        assert np.array_equal(industry_of_stock, [0, 0, 1])
        assert np.array_equal(sector_of_stock, [0, 0, 0])

    def test_identity_maps(self):
        tree = ClassificationTree.from_maps([[0, 1, 2], [0, 1, 2], [0, 1, 2]])
        industry_of_stock, sector_of_stock = compose(tree)
        assert np.array_equal(industry_of_stock, tree.level_maps[0])
        assert np.array_equal(sector_of_stock, tree.level_maps[0])

    def test_matrix_product_matches_composition(self, rng):
        # brute-force matrix multiply is the oracle
        for _ in range(25):
            tree = random_tree(rng, int(rng.integers(2, 30)))
            omega = tree.level_loadings(0).to_dense()
            lam = tree.level_loadings(1).to_dense()
            product = omega @ lam
            composed = tree.loadings(1).to_dense()
            assert np.array_equal(product, composed)

    def test_triple_product_exact(self, rng):
        for _ in range(25):
            tree = random_tree(rng, int(rng.integers(2, 30)))
            dense = (
                tree.level_loadings(0).to_dense(np.int64)
                @ tree.level_loadings(1).to_dense(np.int64)
                @ tree.level_loadings(2).to_dense(np.int64)
            )
            assert np.array_equal(dense, tree.loadings(2).to_dense(np.int64))

    def test_associativity(self, rng):
        for _ in range(10):
            tree = random_tree(rng, 20)
            g, s, t = tree.level_maps
            via_right = t[s[g]]        # T o (S o G)
            via_left = (t[s])[g]       # (T o S) o G
            assert np.array_equal(via_right, via_left)
            assert np.array_equal(via_right, tree.stock_group_maps()[2])

    def test_binary_compose_object(self):
        g = binary_loadings([0, 1, 1], cols=2)
        s = binary_loadings([1, 0], cols=2)
        assert np.array_equal((g @ s).to_dense(), g.to_dense() @ s.to_dense())


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_row_sums_property(data):
    n = data.draw(st.integers(1, 25))
    k = data.draw(st.integers(1, n))
    assignment = [data.draw(st.integers(0, k - 1)) for _ in range(n)]
    dense = binary_loadings(assignment, cols=k).to_dense()
    assert np.array_equal(dense.sum(axis=1), np.ones(n))


class TestRestrictStocks:
    def test_restriction_compacts(self, small_tree):
        sub = small_tree.restrict_stocks([0, 1, 2])
        assert sub.n_stocks == 3
        assert sub.validate().ok
        assert sub.cardinalities == (2, 1, 1)

    def test_ticker_bookkeeping(self, rng):
        tree = random_tree(rng, 12)
        sub = tree.restrict_stocks([3, 5, 7])
        assert sub.tickers == (tree.tickers[3], tree.tickers[5], tree.tickers[7])
