import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedad.anomaly import (
    AnomalyModel,
    anomaly_score,
    anomaly_scores,
    classification_report,
    error_vector,
    evaluate,
    f_theta,
    fit_anomaly_model,
    fit_gaussian_baseline,
    gaussian_probability,
    normalize_scores,
    rmse,
    select_threshold,
)
from fedad.exceptions import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyData,
    LengthMismatch,
    ShapeMismatch,
    SingularCovariance,
    TooFewSamples,
)


class TestGaussianBaseline:
    def test_fit(self):
        g = fit_gaussian_baseline([[0.0], [2.0]])
        np.testing.assert_array_equal(g.mu, [1.0])
        np.testing.assert_array_equal(g.sigma2, [1.0])

    def test_single_point_hits_floor(self):
        g = fit_gaussian_baseline([[3.0, 4.0]])
        np.testing.assert_array_equal(g.sigma2, [1e-12, 1e-12])

    def test_symmetric(self):
        g = fit_gaussian_baseline([[-3.0], [3.0]])
        assert g.mu[0] == 0 and g.sigma2[0] == 9.0

    def test_empty(self):
        with pytest.raises(EmptyData):
            fit_gaussian_baseline(np.zeros((0, 2)))

    def test_density_at_mean(self):
        g = fit_gaussian_baseline([[-1.0], [1.0]])
        assert gaussian_probability([0.0], g) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
        assert gaussian_probability([0.0], g) == pytest.approx(0.398942, abs=1e-6)

    def test_factorizes(self):
        g = fit_gaussian_baseline([[0.0, 1.0], [2.0, 5.0], [1.0, 0.0]])
        x = np.array([0.7, 3.1])
        from fedad.anomaly import GaussianBaseline

        parts = [gaussian_probability(x[j : j + 1], GaussianBaseline(g.mu[j : j + 1], g.sigma2[j : j + 1])) for j in range(2)]
        assert gaussian_probability(x, g) == pytest.approx(parts[0] * parts[1], rel=1e-14)

    def test_tail_decreasing(self):
        g = fit_gaussian_baseline([[-1.0], [1.0]])
        p = gaussian_probability(np.array([[0.0], [1.0], [3.0], [10.0]]), g)
        assert np.all(np.diff(p) < 0)

    def test_dim_mismatch(self):
        g = fit_gaussian_baseline([[0.0], [1.0]])
        with pytest.raises(DimensionMismatch):
            gaussian_probability([0.0, 1.0], g)


class TestErrorVector:
    def test_example(self):
        np.testing.assert_array_equal(error_vector([[1, 2]], [[3, 0]]), [2, 2])

    def test_row_major(self):
        np.testing.assert_array_equal(error_vector([[1, 2], [3, 4]], np.zeros((2, 2))), [1, 2, 3, 4])

    def test_symmetric_and_zero(self):
        a, b = np.array([[1.0, -2.0]]), np.array([[0.5, 3.0]])
        np.testing.assert_array_equal(error_vector(a, b), error_vector(b, a))
        assert not error_vector(a, a).any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            error_vector(np.zeros((2, 1)), np.zeros((1, 2)))


class TestFitAnomalyModel:
    def test_identical_errors_pure_ridge(self):
        mu, cov = fit_anomaly_model(np.ones((5, 3)))
        np.testing.assert_array_equal(mu, [1, 1, 1])
        np.testing.assert_array_equal(cov, 1e-12 * np.eye(3))

    def test_two_points(self):
        mu, cov = fit_anomaly_model([[0.0], [2.0]])
        assert mu[0] == 1.0
        assert cov[0, 0] == pytest.approx(1 + 1e-6, abs=1e-15)

    def test_centering(self):
        E = np.random.default_rng(0).normal(size=(20, 4))
        mu, _ = fit_anomaly_model(E)
        np.testing.assert_allclose((E - mu).mean(axis=0), 0, atol=1e-15)

    def test_diagonal(self):
        E = np.random.default_rng(0).normal(size=(20, 3))
        _, cov = fit_anomaly_model(E, diagonal=True)
        assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            fit_anomaly_model([[1.0, 2.0]])


class TestScore:
    def test_scalar(self):
        assert anomaly_score([2.0], AnomalyModel(np.array([1.0]), np.array([[4.0]]))) == 0.25

    def test_at_mean(self):
        m = AnomalyModel(np.array([1.0, 2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
        assert anomaly_score([1.0, 2.0], m) == 0.0

    def test_matches_inverse(self):
        rng = np.random.default_rng(1)
        mu, cov = fit_anomaly_model(rng.normal(size=(30, 4)))
        b = rng.normal(size=(5, 4))
        ref = np.einsum("ni,ij,nj->n", b - mu, np.linalg.inv(cov), b - mu)
        np.testing.assert_allclose(anomaly_scores(b, AnomalyModel(mu, cov)), ref, rtol=1e-10)

    def test_rotation_invariant(self):
        rng = np.random.default_rng(2)
        mu, cov = fit_anomaly_model(rng.normal(size=(30, 4)))
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        b = rng.normal(size=(6, 4))
        a = anomaly_scores(b, AnomalyModel(mu, cov))
        r = anomaly_scores(b @ Q.T, AnomalyModel(Q @ mu, Q @ cov @ Q.T))
        np.testing.assert_allclose(a, r, rtol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_positive_off_mean(self, seed):
        rng = np.random.default_rng(seed)
        mu, cov = fit_anomaly_model(rng.normal(size=(3, 5)))
        b = mu + rng.normal(size=5) * 1e-3
        assert anomaly_score(b, AnomalyModel(mu, cov)) > 0

    def test_singular(self):
        with pytest.raises(SingularCovariance):
            anomaly_score([1.0, 1.0], AnomalyModel(np.zeros(2), np.zeros((2, 2))))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            anomaly_score([1.0, 1.0], AnomalyModel(np.zeros(1), np.eye(1)))


class TestThreshold:
    def test_f_theta_value(self):
        t2 = Fraction(1, 20) ** 2
        exact = (1 + t2) * Fraction(1, 2) / (t2 + Fraction(1, 2))
        assert exact == Fraction(401, 402)
        assert f_theta(1.0, 0.5, 0.05) == pytest.approx(float(exact), rel=1e-14)

    def test_f_theta_tends_to_precision(self):
        assert f_theta(0.3, 0.9, 1e-6) == pytest.approx(0.3, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 10))
    def test_f_theta_range(self, p, r, t):
        assert 0.0 <= f_theta(p, r, t) <= 1.0 + 1e-12

    def test_separable(self):
        t, f = select_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], 0.05)
        assert f == 1.0
        lo, hi = normalize_scores([0.2, 0.8], 0.1, 0.9)
        assert lo < t < hi

    def test_midpoint_threshold(self):
        t, f = select_threshold([0.0, 1.0, 2.0], [0, 1, 1], 0.05)
        assert f == 1.0 and t == 0.25

    def test_all_equal_scores(self):
        t, f = select_threshold([1.0, 1.0, 1.0], [0, 1, 0], 0.05)
        assert t == 0.0
        assert f == pytest.approx(f_theta(1 / 3, 1.0, 0.05))

    @pytest.mark.parametrize("labels", [[0, 0, 0], [1, 1, 1]])
    def test_degenerate(self, labels):
        with pytest.raises(DegenerateLabels):
            select_threshold([0.1, 0.5, 0.9], labels)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            select_threshold([0.1, 0.5], [0, 1, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.booleans()), min_size=3, max_size=30))
    def test_monotone_invariance(self, pairs):
        scores = np.array([s for s, _ in pairs])
        labels = np.array([l for _, l in pairs])
        if labels.all() or not labels.any():
            return
        t1, f1 = select_threshold(scores, labels)
        transformed = np.exp(scores)
        t2, f2 = select_threshold(transformed, labels)
        assert f1 == pytest.approx(f2, abs=1e-12)
        flag1 = normalize_scores(scores, scores.min(), scores.max()) >= t1
        flag2 = normalize_scores(transformed, transformed.min(), transformed.max()) >= t2
        np.testing.assert_array_equal(flag1, flag2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.05, 1.0]))
    def test_brute_force(self, seed, theta):
        rng = np.random.default_rng(seed)
        # few distinct values so F ties between cuts are common
        scores = rng.integers(0, 6, size=25).astype(float)
        labels = rng.random(25) < 0.3
        if labels.all() or not labels.any():
            return
        t, f = select_threshold(scores, labels, theta)
        norm = normalize_scores(scores, scores.min(), scores.max())
        distinct = np.unique(norm)
        cands = sorted(set([0.0, 1.0]) | set((distinct[:-1] + distinct[1:]) / 2))
        results = []
        for cut in cands:
            d = norm >= cut
            tp = np.sum(d & labels)
            p = tp / d.sum() if d.sum() else 0.0
            results.append((cut, f_theta(p, tp / labels.sum(), theta)))
        best = max(r for _, r in results)
        assert f == pytest.approx(best, abs=1e-12)
        assert t == min(c for c, r in results if r == best)


class TestEvaluate:
    def test_rmse_example(self):
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(3.535534, abs=1e-6)

    def test_rmse_zero_and_permutation(self):
        a = np.random.default_rng(0).normal(size=10)
        b = np.random.default_rng(1).normal(size=10)
        assert rmse(a, a) == 0.0
        perm = np.random.default_rng(2).permutation(10)
        assert rmse(a[perm], b[perm]) == pytest.approx(rmse(a, b), rel=1e-14)

    def test_rmse_errors(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(EmptyData):
            rmse([], [])

    def test_undefined_precision_flag(self):
        rep = classification_report([0, 0, 0], [0, 0, 0], 0.05, 0.5, 0.0)
        assert rep.precision == 0.0 and rep.precision_undefined
        assert rep.recall_undefined and rep.accuracy == 1.0

    def test_counts(self):
        rep = classification_report([1, 1, 0, 0], [1, 0, 0, 1], 0.05, 0.5, 0.0)
        assert (rep.tp, rep.fp, rep.tn, rep.fn) == (1, 1, 1, 1)
        assert rep.precision == 0.5 and rep.recall == 0.5 and rep.accuracy == 0.5

    def test_evaluate_end_to_end(self):
        actual = np.zeros((4, 2, 1))
        pred = actual.copy()
        pred[3] += 5.0
        model = AnomalyModel(np.zeros(2), np.eye(2), threshold=0.5, score_min=0.0, score_max=50.0)
        rep = evaluate(pred, actual, [0, 0, 0, 1], model)
        assert (rep.tp, rep.fp, rep.tn, rep.fn) == (1, 0, 3, 0)
        assert rep.rmse == pytest.approx(math.sqrt(25 * 2 / 8))

    def test_evaluate_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            evaluate(np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), [0], AnomalyModel(np.zeros(1), np.eye(1)))
