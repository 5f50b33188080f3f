import numpy as np
import pytest

from nestedrisk.riskmodel import (
    EQUAL_COMPONENT_WEIGHTS,
    IDIO_SUBINDUSTRY_SPLIT,
    ExplicitFCM,
    FactorModelLevel,
    ModelSpec,
    NestedRiskModel,
    RiskModelError,
    ScalarVariance,
    binary_gamma_entry,
    binary_gamma_matrix,
    check_positive_definite,
    correlation_from_covariance,
    expand_nested,
    extend_with_style,
    gamma,
    heuristic_correlation_model,
    load_matrix_csv,
    load_model_spec,
    market_variance_estimate,
    save_matrix_csv,
    save_model_spec,
    scale_correlation_to_covariance,
)
from nestedrisk.synthetic import random_tree
from nestedrisk.taxonomy import ClassificationTree


def random_psd(rng, n, jitter=0.0):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + jitter * np.eye(n)


def expand_reference(levels, terminal_matrix):
    """Independent recursive expansion: substitute each level's FCM in turn."""
    fcm = terminal_matrix
    for loadings, specific in reversed(levels):
        w = np.asarray(loadings, dtype=float)
        out = np.diag(np.asarray(specific, dtype=float))
        if fcm is not None:
            out = out + w @ fcm @ w.T
        fcm = out
    return fcm


def random_nested_model(rng, max_levels=4, max_stocks=60):
    n = int(rng.integers(4, max_stocks + 1))
    n_levels = int(rng.integers(2, max_levels + 1))
    terminal_kind = rng.choice(["explicit", "scalar", "none"])
    dims = [n]
    for _ in range(n_levels):
        dims.append(int(rng.integers(1, max(2, dims[-1] // 2) + 1)))
    if terminal_kind == "scalar":
        dims[-1] = 1
    levels = []
    raw = []
    for lvl in range(n_levels):
        rows, cols = dims[lvl], dims[lvl + 1]
        loadings = rng.normal(size=(rows, cols))
        specific = rng.uniform(0.1, 2.0, rows)
        levels.append(FactorModelLevel(loadings, specific))
        raw.append((loadings, specific))
    if terminal_kind == "explicit":
        terminal = ExplicitFCM(random_psd(rng, dims[-1], jitter=0.05))
        term_mat = terminal.matrix
    elif terminal_kind == "scalar":
        x = float(rng.uniform(0.0, 1.5))
        terminal = ScalarVariance(x)
        term_mat = np.array([[x]])
    else:
        terminal = None
        term_mat = None
    return NestedRiskModel(tuple(levels), terminal), raw, term_mat


class TestGamma:
    def test_zero_factor_variance(self):
        level = FactorModelLevel(np.ones((2, 1)), [1.0, 1.0])
        assert np.array_equal(gamma(level, np.array([[0.0]])), np.eye(2))

    def test_loadings_identity(self):
        level = FactorModelLevel(np.eye(2), [0.0, 0.0])
        out = gamma(level, np.diag([3.0, 7.0]))
        assert np.array_equal(out, np.diag([3.0, 7.0]))

    def test_triple_loop_oracle(self, rng):
        n, k = 6, 2
        loadings = rng.normal(size=(n, k))
        specific = rng.uniform(0.1, 1.0, n)
        fcm = random_psd(rng, k)
        expected = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                acc = specific[i] if i == j else 0.0
                for a in range(k):
                    for b in range(k):
                        acc += loadings[i, a] * fcm[a, b] * loadings[j, b]
                expected[i, j] = acc
        out = gamma(FactorModelLevel(loadings, specific), fcm)
        assert np.allclose(out, expected, rtol=0, atol=1e-13)

    def test_dimension_mismatch(self):
        level = FactorModelLevel(np.ones((3, 2)), np.ones(3))
        with pytest.raises(RiskModelError):
            gamma(level, np.eye(3))

    def test_asymmetric_fcm_rejected(self):
        level = FactorModelLevel(np.ones((2, 2)), np.ones(2))
        with pytest.raises(RiskModelError, match="symmetric"):
            gamma(level, np.array([[1.0, 0.5], [0.1, 1.0]]))


class TestFlatten:
    def test_single_level_is_identity_transformation(self, rng):
        loadings = rng.normal(size=(5, 2))
        specific = rng.uniform(0.1, 1.0, 5)
        fcm = random_psd(rng, 2)
        model = NestedRiskModel((FactorModelLevel(loadings, specific),), ExplicitFCM(fcm))
        flat = model.flatten()
        assert np.array_equal(flat.loadings, loadings)
        assert np.allclose(flat.fcm, fcm, rtol=0, atol=0)
        assert np.array_equal(flat.specific_variances, specific)

    def test_two_binary_levels_plus_scalar(self, rng):
        tree2 = ClassificationTree.from_maps(
            [[0, 0, 1, 2, 2, 1], [0, 0, 0]], level_names=("sub_industry", "market")
        )
        omega = tree2.level_loadings(0)
        lam = tree2.level_loadings(1)
        xi = rng.uniform(0.1, 1.0, 6)
        zeta = rng.uniform(0.0, 1.0, 3)
        x = 0.7
        model = NestedRiskModel(
            (FactorModelLevel(omega, xi), FactorModelLevel(lam, zeta)), ScalarVariance(x)
        )
        reference = expand_reference(
            [(omega.to_dense(), xi), (lam.to_dense(), zeta)], np.array([[x]])
        )
        flat = model.flatten().gamma_dense()
        assert np.abs(flat - reference).max() <= 1e-12

    def test_random_nested_equivalence(self, rng):
        for _ in range(40):
            model, raw, term = random_nested_model(rng)
            reference = expand_reference(raw, term)
            flat = model.flatten().gamma_dense()
            scale = max(1.0, np.abs(reference).max())
            assert np.abs(flat - reference).max() <= 1e-12 * scale
            assert np.abs(expand_nested(model) - reference).max() <= 1e-12 * scale

    def test_three_level_binary_with_equal_weights(self, rng):
        tree = random_tree(rng, 30)
        model = heuristic_correlation_model(tree)
        flat = model.flatten().gamma_dense()
        closed_form = binary_gamma_matrix(tree, EQUAL_COMPONENT_WEIGHTS)
        assert np.abs(flat - closed_form).max() <= 1e-12

    def test_block_structure(self, small_tree):
        flat = heuristic_correlation_model(small_tree).flatten()
        k, f, l = small_tree.cardinalities
        assert flat.block_dims == (k, f, l, 1)
        # off-diagonal blocks of the FCM vanish: it is block-diagonal
        m = flat.fcm
        start = 0
        for dim in flat.block_dims:
            block = slice(start, start + dim)
            rest = np.ones(m.shape[0], dtype=bool)
            rest[block] = False
            assert np.all(m[block][:, rest] == 0)
            start += dim

    def test_dense_cap(self, rng):
        tree = random_tree(rng, 30)
        flat = heuristic_correlation_model(tree).flatten()
        with pytest.raises(RiskModelError, match="max_dense"):
            flat.gamma_dense(max_dense=10)


class TestBinaryGammaEntry:
    def test_equal_weights_diagonal(self, small_tree):
        for i in range(small_tree.n_stocks):
            assert binary_gamma_entry(small_tree, EQUAL_COMPONENT_WEIGHTS, i, i) == 1.0

    def test_equal_weights_off_diagonal_ladder(self, small_tree):
        # stocks 0,1 share a sub-industry; 0,2 share only an industry;
        # 0,4 share only a sector; 0,6 share nothing below the market
        entry = lambda i, j: binary_gamma_entry(small_tree, EQUAL_COMPONENT_WEIGHTS, i, j)
        assert entry(0, 1) == pytest.approx(0.8, abs=1e-15)
        assert entry(0, 2) == pytest.approx(0.6, abs=1e-15)
        assert entry(0, 4) == pytest.approx(0.4, abs=1e-15)
        assert entry(0, 6) == pytest.approx(0.2, abs=1e-15)

    def test_zero_market_distinct_sectors(self, small_tree):
        weights = (0.25, 0.25, 0.25, 0.25, 0.0)
        assert binary_gamma_entry(small_tree, weights, 0, 6) == 0.0

    def test_vector_variances(self, small_tree):
        xi = np.arange(1.0, 9.0)
        zeta = np.array([0.1, 0.2, 0.3, 0.4])
        eta = np.array([0.5, 0.6, 0.65])
        sigma = np.array([0.7, 0.8])
        x = 0.05
        v = (xi, zeta, eta, sigma, x)
        g = small_tree.stock_group_maps()
        i = 3
        expected = xi[3] + zeta[g[0][i]] + eta[g[1][i]] + sigma[g[2][i]] + x
        assert binary_gamma_entry(small_tree, v, i, i) == pytest.approx(expected, rel=1e-15)

    def test_monotone_in_common_depth(self, rng):
        for _ in range(10):
            tree = random_tree(rng, 24)
            weights = rng.uniform(0.0, 1.0, 5)
            weights /= weights.sum()
            g = tree.stock_group_maps()
            gm = binary_gamma_matrix(tree, weights)
            depth = np.zeros((24, 24), dtype=int)
            for d in range(3):
                depth += (g[d][:, None] == g[d][None, :]).astype(int)
            off = ~np.eye(24, dtype=bool)
            for d in range(3):
                shallow = off & (depth == d)
                deeper = off & (depth == d + 1)
                if shallow.any() and deeper.any():
                    assert gm[deeper].min() >= gm[shallow].max() - 1e-12


class TestHeuristicCorrelationModel:
    def test_default_weights_structure(self, rng):
        tree = random_tree(rng, 25)
        gm = binary_gamma_matrix(tree, EQUAL_COMPONENT_WEIGHTS)
        off = gm[~np.eye(25, dtype=bool)]
        targets = np.array([0.2, 0.4, 0.6, 0.8])
        assert np.abs(off[:, None] - targets[None, :]).min(axis=1).max() <= 1e-15

    def test_two_component_preset(self, rng):
        tree = random_tree(rng, 12)
        model = heuristic_correlation_model(tree, IDIO_SUBINDUSTRY_SPLIT)
        dense = model.flatten().gamma_dense()
        sub = tree.stock_group_maps()[0]
        same = sub[:, None] == sub[None, :]
        assert np.allclose(np.diag(dense), 1.0, rtol=0, atol=0)
        assert np.allclose(dense[same & ~np.eye(12, dtype=bool)], 0.5, atol=1e-15)
        assert np.all(dense[~same] == 0.0)

    def test_pure_idiosyncratic_is_identity(self, rng):
        tree = random_tree(rng, 9)
        model = heuristic_correlation_model(tree, (1.0, 0.0, 0.0, 0.0, 0.0))
        assert np.array_equal(model.flatten().gamma_dense(), np.eye(9))

    def test_weights_must_sum_to_one(self, rng):
        tree = random_tree(rng, 5)
        with pytest.raises(RiskModelError, match="sum to 1"):
            heuristic_correlation_model(tree, (0.2, 0.2, 0.2, 0.2, 0.1))

    def test_negative_weight_rejected(self, rng):
        tree = random_tree(rng, 5)
        with pytest.raises(RiskModelError, match="nonnegative"):
            heuristic_correlation_model(tree, (1.2, -0.2, 0.0, 0.0, 0.0))

    def test_unit_diagonal_for_arbitrary_valid_weights(self, rng):
        for _ in range(20):
            tree = random_tree(rng, int(rng.integers(3, 30)))
            w = rng.uniform(0.05, 1.0, 5)
            w /= w.sum()
            model = heuristic_correlation_model(tree, w)
            flat = model.flatten()
            # closed form: exactly one
            weights_used = (
                [float(flat.specific_variances[0])]
                + [float(w_) for w_ in w[1:]]
            )
            for i in range(tree.n_stocks):
                assert binary_gamma_entry(tree, weights_used, i, i) == 1.0
            assert np.abs(np.diag(flat.gamma_dense()) - 1.0).max() <= 1e-15


class TestScaleCorrelation:
    def test_identity_scaling(self, rng):
        tree = random_tree(rng, 10)
        corr = binary_gamma_matrix(tree, EQUAL_COMPONENT_WEIGHTS)
        out = scale_correlation_to_covariance(corr, np.ones(10))
        assert np.array_equal(out, corr)

    def test_two_stock_arithmetic(self):
        corr = np.array([[1.0, 0.2], [0.2, 1.0]])
        out = scale_correlation_to_covariance(corr, np.array([4.0, 9.0]))
        assert out[0, 0] == 4.0 and out[1, 1] == 9.0
        assert out[0, 1] == pytest.approx(1.2, rel=1e-15)
        assert out[1, 0] == out[0, 1]

    def test_positive_definiteness_preserved(self, rng):
        for _ in range(10):
            n = 15
            base = random_psd(rng, n, jitter=0.5)
            corr = correlation_from_covariance(base)
            c = rng.uniform(0.01, 4.0, n)
            scaled = scale_correlation_to_covariance(corr, c)
            assert np.linalg.eigvalsh(scaled)[0] > 0

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(RiskModelError, match="index 1"):
            scale_correlation_to_covariance(np.eye(2), np.array([1.0, 0.0]))

    def test_round_trip_recovers_correlation(self, rng):
        tree = random_tree(rng, 12)
        corr = binary_gamma_matrix(tree, EQUAL_COMPONENT_WEIGHTS)
        c = rng.uniform(0.01, 4.0, 12)
        back = correlation_from_covariance(scale_correlation_to_covariance(corr, c))
        assert np.abs(back - corr).max() <= 1e-12

    def test_flat_model_scaling_matches_dense(self, rng):
        tree = random_tree(rng, 14)
        flat = heuristic_correlation_model(tree).flatten()
        c = rng.uniform(0.01, 4.0, 14)
        dense = scale_correlation_to_covariance(flat.gamma_dense(), c)
        scaled = flat.scaled_by_variances(c).gamma_dense()
        assert np.abs(dense - scaled).max() <= 1e-12 * max(1.0, np.abs(dense).max())


class TestExtendWithStyle:
    def test_no_styles_reduces_to_pure_model(self, rng):
        tree = random_tree(rng, 10)
        l = tree.cardinalities[2]
        theta = random_psd(rng, l, jitter=0.1)
        via_extend = extend_with_style(
            tree, np.zeros((10, 0)), theta, 0.3, 0.2, 0.1
        ).expand_dense()
        pure = NestedRiskModel.from_tree(tree, [0.3, 0.2, 0.1], ExplicitFCM(theta))
        assert np.abs(via_extend - pure.expand_dense()).max() <= 1e-14

    def test_null_style_factor_changes_nothing(self, rng):
        tree = random_tree(rng, 10)
        l = tree.cardinalities[2]
        theta = random_psd(rng, l, jitter=0.1)
        theta_ext = np.zeros((l + 1, l + 1))
        theta_ext[:l, :l] = theta
        extended = extend_with_style(
            tree, np.zeros((10, 1)), theta_ext, 0.3, 0.2, 0.1
        ).expand_dense()
        pure = NestedRiskModel.from_tree(tree, [0.3, 0.2, 0.1], ExplicitFCM(theta))
        assert np.abs(extended - pure.expand_dense()).max() <= 1e-14

    def test_two_styles_against_block_expansion(self, rng):
        tree = random_tree(rng, 12)
        k, f, l = tree.cardinalities
        u = 2
        style = rng.normal(size=(12, u))
        theta = random_psd(rng, l + u, jitter=0.1)
        xi = rng.uniform(0.1, 1.0, 12)
        zeta = rng.uniform(0.0, 1.0, k)
        eta = rng.uniform(0.0, 1.0, f)
        model = extend_with_style(tree, style, theta, xi, zeta, eta)

        # brute-force expansion of the block construction
        omega_e = np.hstack([tree.level_loadings(0).to_dense(), style])
        lam_e = np.zeros((k + u, f + u))
        lam_e[:k, :f] = tree.level_loadings(1).to_dense()
        lam_e[k:, f:] = np.eye(u)
        delta_e = np.zeros((f + u, l + u))
        delta_e[:f, :l] = tree.level_loadings(2).to_dense()
        delta_e[f:, l:] = np.eye(u)
        zeta_e = np.concatenate([zeta, np.zeros(u)])
        eta_e = np.concatenate([eta, np.zeros(u)])
        omega_tilde = omega_e @ lam_e
        omega_hat = omega_tilde @ delta_e
        reference = (
            np.diag(xi)
            + omega_e @ np.diag(zeta_e) @ omega_e.T
            + omega_tilde @ np.diag(eta_e) @ omega_tilde.T
            + omega_hat @ theta @ omega_hat.T
        )
        scale = max(1.0, np.abs(reference).max())
        assert np.abs(model.flatten().gamma_dense() - reference).max() <= 1e-12 * scale
        assert np.abs(model.expand_dense() - reference).max() <= 1e-12 * scale

    def test_dimension_mismatch(self, rng):
        tree = random_tree(rng, 8)
        l = tree.cardinalities[2]
        with pytest.raises(RiskModelError, match="terminal FCM"):
            extend_with_style(tree, np.zeros((8, 2)), np.eye(l + 1), 0.5, 0.3, 0.2)


class TestCheckPositiveDefinite:
    def test_identity(self):
        report = check_positive_definite(np.eye(4))
        assert report.passed and report.cholesky_ok
        assert report.min_eigenvalue == pytest.approx(1.0)

    def test_equal_weights_model_on_random_trees(self, rng):
        for _ in range(10):
            tree = random_tree(rng, int(rng.integers(4, 40)))
            dense = heuristic_correlation_model(tree).flatten().gamma_dense()
            report = check_positive_definite(dense)
            assert report.passed and report.cholesky_ok
            # eigen-decomposition oracle: strictly positive spectrum
            assert np.linalg.eigvalsh(dense)[0] > 0

    def test_rank_one_fails_strict_tolerance(self):
        ones = np.ones((5, 5))
        report = check_positive_definite(ones, tolerance=1e-12)
        assert report.min_eigenvalue == pytest.approx(0.0, abs=1e-12)
        assert not report.passed
        assert not report.cholesky_ok

    def test_asymmetric_rejected(self):
        mat = np.array([[1.0, 2e-3], [0.0, 1.0]])
        with pytest.raises(RiskModelError, match="symmetric"):
            check_positive_definite(mat)


class TestNestedModelValidation:
    def test_scalar_terminal_needs_single_factor(self):
        level = FactorModelLevel(np.ones((3, 2)), np.ones(3))
        with pytest.raises(RiskModelError, match="single innermost factor"):
            NestedRiskModel((level,), ScalarVariance(1.0))

    def test_chain_dimensions_checked(self):
        a = FactorModelLevel(np.ones((4, 3)), np.ones(4))
        b = FactorModelLevel(np.ones((2, 1)), np.ones(2))
        with pytest.raises(RiskModelError, match="followed by"):
            NestedRiskModel((a, b))

    def test_negative_specific_variance_rejected(self):
        with pytest.raises(RiskModelError, match="negative specific variance"):
            FactorModelLevel(np.ones((2, 1)), [0.5, -0.1])

    def test_terminal_psd_checked(self):
        with pytest.raises(RiskModelError, match="positive-semidefinite"):
            ExplicitFCM(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestMarketVarianceEstimate:
    def test_matches_direct_computation(self, rng):
        r = rng.normal(size=(100, 7))
        expected = np.var(r.mean(axis=1), ddof=1)
        assert market_variance_estimate(r) == pytest.approx(expected, rel=1e-12)

    def test_skips_missing(self, rng):
        r = rng.normal(size=(50, 3))
        r[5, 1] = np.nan
        assert np.isfinite(market_variance_estimate(r))


class TestModelSpecFiles:
    def test_matrix_csv_round_trip(self, tmp_path, rng):
        mat = rng.normal(size=(5, 3)) * 1e4
        path = tmp_path / "m.csv"
        save_matrix_csv(path, mat)
        back = load_matrix_csv(path)
        assert np.array_equal(back, mat)

    def test_model_spec_round_trip(self, tmp_path):
        spec = ModelSpec(weights=(0.2, 0.2, 0.2, 0.2, 0.2), terminal="scalar-x")
        path = tmp_path / "model.txt"
        save_model_spec(spec, path)
        assert load_model_spec(path) == spec

    def test_explicit_fcm_requires_path(self):
        with pytest.raises(RiskModelError, match="fcm path"):
            ModelSpec(terminal="explicit-fcm")

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("terminal = none\nbogus = 1\n")
        with pytest.raises(RiskModelError, match="unknown keys"):
            load_model_spec(path)

    def test_comments_and_spacing(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("# comment\nweights = 0.5 0.5 0 0 0\nterminal = none\n")
        spec = load_model_spec(path)
        assert spec.weights == (0.5, 0.5, 0.0, 0.0, 0.0)
        assert spec.terminal == "none"
