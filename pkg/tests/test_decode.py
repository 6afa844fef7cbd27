"""PCA, ridge regression, nested CV decoding, rank metrics."""

import numpy as np
import pytest

from neuroalign.decode import (
    BrainMatrix,
    DEFAULT_LAMBDA_GRID,
    nested_cv_decode,
    pca_fit_transform,
    pearson_per_stimulus,
    rank_metrics,
    ridge_fit,
)
from neuroalign.reprs import ReprMatrix


class TestPca:
    def test_rank_one(self):
        rng = np.random.default_rng(0)
        direction = rng.normal(size=4)
        X = np.outer(rng.normal(size=10), direction)
        res = pca_fit_transform(X, variance_threshold=0.95)
        assert res.reduced.shape[1] == 1
        assert res.explained[0] == pytest.approx(1.0)

    def test_isotropic_needs_all_components(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 3))
        res = pca_fit_transform(X, variance_threshold=0.95)
        assert res.reduced.shape[1] == 3

    def test_max_dims_cap_flagged(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 5))
        res = pca_fit_transform(X, variance_threshold=0.99, max_dims=2)
        assert res.reduced.shape[1] == 2
        assert res.capped

    def test_zero_variance_error(self):
        with pytest.raises(ValueError, match="zero-variance"):
            pca_fit_transform(np.ones((5, 3)))

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 4))
        r1 = pca_fit_transform(X)
        r2 = pca_fit_transform(X)
        np.testing.assert_array_equal(r1.basis, r2.basis)
        for j in range(r1.basis.shape[1]):
            i = np.argmax(np.abs(r1.basis[:, j]))
            assert r1.basis[i, j] > 0

    def test_explained_fractions_match_variance(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(200, 4)) * np.array([10.0, 3.0, 1.0, 0.1])
        res = pca_fit_transform(X, variance_threshold=1.0)
        Xc = X - X.mean(axis=0)
        total = np.sum(Xc * Xc)
        per_comp = np.sum(res.reduced**2, axis=0) / total
        np.testing.assert_allclose(res.explained, per_comp, atol=1e-12)


class TestRidge:
    def test_identity_design_lambda_zero(self):
        G = ridge_fit(np.eye(2), np.diag([2.0, 2.0]), 0.0)
        np.testing.assert_allclose(G.weights, np.diag([2.0, 2.0]), atol=1e-12)

    def test_identity_design_lambda_one(self):
        G = ridge_fit(np.eye(2), np.diag([2.0, 2.0]), 1.0)
        np.testing.assert_allclose(G.weights, np.diag([1.0, 1.0]), atol=1e-12)

    def test_huge_lambda_shrinks_to_zero(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(20, 4))
        D = rng.normal(size=(20, 3))
        g0 = ridge_fit(B, D, 1e-6)
        g9 = ridge_fit(B, D, 1e9)
        assert np.linalg.norm(g9.weights) < 1e-6 * np.linalg.norm(g0.weights)

    def test_singular_at_zero_raises(self):
        B = np.zeros((4, 3))
        B[:, 0] = 1.0
        with pytest.raises(ValueError, match="lambda > 0"):
            ridge_fit(B, np.ones((4, 2)), 0.0)

    def test_matches_lstsq_at_zero(self):
        rng = np.random.default_rng(1)
        B = rng.normal(size=(6, 6))
        D = rng.normal(size=(6, 2))
        G = ridge_fit(B, D, 0.0).weights
        expected = np.linalg.lstsq(B, D, rcond=None)[0]
        resid = np.linalg.norm(G - expected) / np.linalg.norm(expected)
        assert resid < 1e-8

    def test_monotone_shrinkage(self):
        rng = np.random.default_rng(2)
        B = rng.normal(size=(30, 5))
        D = rng.normal(size=(30, 4))
        norms = [
            np.linalg.norm(ridge_fit(B, D, lam).weights)
            for lam in (0.0, 0.1, 1.0, 10.0, 100.0)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_row_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            ridge_fit(np.ones((3, 2)), np.ones((4, 2)), 1.0)


class TestPearson:
    def test_identical(self):
        assert pearson_per_stimulus([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (
            pytest.approx(1.0)
        )

    def test_negated(self):
        assert pearson_per_stimulus([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]) == (
            pytest.approx(-1.0)
        )

    def test_known_value(self):
        got = pearson_per_stimulus([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        # closed form: cov/sd product for these six numbers
        assert got == pytest.approx(0.9819805060619659, abs=1e-10)

    def test_constant_errors(self):
        with pytest.raises(ValueError, match="constant"):
            pearson_per_stimulus([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def make_linear_problem(seed, n=200, d_b=32, d_h=16, noise=0.0):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, d_b))
    M = rng.normal(size=(d_b, d_h)) / np.sqrt(d_b)
    D = B @ M + noise * rng.normal(size=(n, d_h))
    labels = tuple(f"s{i}" for i in range(n))
    return BrainMatrix(data=B, labels=labels), ReprMatrix(data=D, labels=labels)


class TestNestedCv:
    def test_noiseless_recovery(self):
        brain, reps = make_linear_problem(0)
        report = nested_cv_decode(brain, reps, outer_folds=12, inner_folds=5,
                                  seed=0)
        assert report.summary["mean_pearson"] >= 0.999
        assert report.summary["mean_rank"] <= 1.01

    def test_pure_noise_near_zero(self):
        rng = np.random.default_rng(1)
        labels = tuple(f"s{i}" for i in range(150))
        brain = BrainMatrix(data=rng.normal(size=(150, 16)), labels=labels)
        reps = ReprMatrix(data=rng.normal(size=(150, 12)), labels=labels)
        report = nested_cv_decode(brain, reps, seed=1)
        assert abs(report.summary["mean_pearson"]) < 0.05

    def test_degenerate_grid_runs(self):
        brain, reps = make_linear_problem(2, n=60)
        report = nested_cv_decode(brain, reps, lambda_grid=[1.0], seed=0)
        assert report.lambda_by_fold == [1.0] * 12

    def test_folds_partition_exactly(self):
        brain, reps = make_linear_problem(3, n=100)
        report = nested_cv_decode(brain, reps, seed=3)
        assert sorted(np.bincount(report.fold_id, minlength=12)) == (
            sorted(len(f) for f in np.array_split(np.arange(100), 12))
        )
        # every stimulus predicted exactly once: predictions are all finite
        assert np.all(np.isfinite(report.predictions))

    def test_too_few_stimuli(self):
        brain, reps = make_linear_problem(4, n=10)
        with pytest.raises(ValueError, match="outer folds"):
            nested_cv_decode(brain, reps, outer_folds=12)

    def test_label_mismatch(self):
        brain, reps = make_linear_problem(5, n=40)
        other = ReprMatrix(data=reps.data,
                           labels=tuple(f"x{i}" for i in range(40)))
        with pytest.raises(ValueError, match="aligned"):
            nested_cv_decode(brain, other)

    def test_deterministic(self):
        brain, reps = make_linear_problem(6, n=80, noise=0.5)
        r1 = nested_cv_decode(brain, reps, seed=11)
        r2 = nested_cv_decode(brain, reps, seed=11)
        np.testing.assert_array_equal(r1.predictions, r2.predictions)
        assert r1.lambda_by_fold == r2.lambda_by_fold

    def test_report_json_and_csv(self, tmp_path):
        brain, reps = make_linear_problem(7, n=60)
        report = nested_cv_decode(brain, reps, seed=0)
        doc = report.to_json()
        assert "mean_pearson" in doc
        csv_path = tmp_path / "scores.csv"
        report.write_scores_csv(csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "label,fold,pearson"
        assert len(lines) == 61


class TestRankMetrics:
    def test_identical_gives_rank_one(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(10, 4))
        mean, median = rank_metrics(X, X)
        assert mean == 1.0 and median == 1.0

    def test_swapped_two_points(self):
        golds = np.array([[1.0, 0.0], [0.0, 1.0]])
        preds = golds[::-1]
        mean, median = rank_metrics(preds, golds)
        assert mean == 2.0

    def test_independent_random_near_half(self):
        means = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            preds = rng.normal(size=(100, 8))
            golds = rng.normal(size=(100, 8))
            means.append(rank_metrics(preds, golds)[0])
        center = float(np.mean(means))
        assert abs(center - 50.5) < 5.0

    def test_zero_norm_error(self):
        with pytest.raises(ValueError, match="zero-norm"):
            rank_metrics(np.zeros((3, 2)), np.ones((3, 2)))

    def test_tie_breaks_by_gold_index(self):
        golds = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        preds = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        mean, _ = rank_metrics(preds, golds)
        # rows 0 and 1 tie at distance 0 for both; gold 0 outranks gold 1,
        # so row 0 ranks 1 and row 1 ranks 2
        assert mean == pytest.approx((1 + 2 + 1) / 3)


class TestDefaultGrid:
    def test_ten_points_logspaced(self):
        grid = np.asarray(DEFAULT_LAMBDA_GRID)
        assert grid.shape == (10,)
        assert grid[0] == pytest.approx(1e-3)
        assert grid[-1] == pytest.approx(1e3)
        ratios = grid[1:] / grid[:-1]
        np.testing.assert_allclose(ratios, ratios[0])
