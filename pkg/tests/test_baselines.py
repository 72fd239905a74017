import math

import numpy as np
import pytest

from conftest import make_set
from rsad.baselines import (
    GaussianClassModel,
    LidConfig,
    LidDetector,
    MahalanobisDetector,
    fit_gaussian_model,
    fit_one_class,
    lid_from_distances,
    lid_score,
    lid_scores,
    mahalanobis_confidence,
    mahalanobis_confidences,
)
from rsad.errors import (
    AdversarialInCalibrationError,
    EmptyClassError,
    InsufficientReferencesError,
    InvalidConfigError,
    SingularCovarianceError,
    TooFewScoresError,
    ZeroRadiusError,
)
from rsad.metrics import auc_from_arrays


def ball_points(gen, n, intrinsic=5, ambient=32):
    direction = gen.standard_normal((n, intrinsic))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = gen.uniform(size=(n, 1)) ** (1.0 / intrinsic)
    basis, _ = np.linalg.qr(gen.standard_normal((ambient, intrinsic)))
    return (direction * radius) @ basis.T


class TestLid:
    def test_five_ball_centre_query(self):
        gen = np.random.default_rng(0)
        ref = make_set(ball_points(gen, 2000), np.zeros(2000, dtype=int))
        est = lid_score(np.zeros(32), LidConfig(ref, 20))
        assert 3.5 <= est <= 6.5

    def test_formula(self):
        r = np.array([1.0, 2.0, 4.0])
        expected = -1.0 / np.mean(np.log(r / 4.0))
        assert lid_from_distances(r) == pytest.approx(expected, rel=1e-15)

    def test_equal_radii_give_infinity(self):
        assert lid_from_distances(np.full(5, 2.0)) == math.inf
        # signed unit axes sit at exactly radius 1 even in float32
        axes = np.concatenate([np.eye(8), -np.eye(8)])
        ref = make_set(axes, np.zeros(16, dtype=int))
        assert lid_score(np.zeros(8), LidConfig(ref, 5)) == math.inf

    def test_zero_radius(self):
        ref = make_set(np.zeros((5, 2)) + 1.0, np.zeros(5, dtype=int))
        with pytest.raises(ZeroRadiusError):
            lid_score([1.0, 1.0], LidConfig(ref, 3))

    def test_scale_invariance(self):
        gen = np.random.default_rng(1)
        X = gen.standard_normal((300, 6))
        z = gen.standard_normal(6)
        base = lid_score(z, LidConfig(make_set(X, np.zeros(300, dtype=int)), 20))
        for c in (0.25, 4.0):  # powers of two keep float32 storage exact
            scaled = lid_score(c * z, LidConfig(make_set(c * X, np.zeros(300, dtype=int)), 20))
            assert scaled == pytest.approx(base, rel=1e-9)

    def test_matches_brute_force_and_excludes_self(self):
        gen = np.random.default_rng(2)
        X = gen.standard_normal((120, 5)).astype(np.float32)
        ref = make_set(X, np.zeros(120, dtype=int))
        cfg = LidConfig(ref, 10)
        got = lid_scores(ref, cfg)
        X64 = X.astype(np.float64)
        for i in range(0, 120, 17):
            dist = np.sqrt(((X64 - X64[i]) ** 2).sum(1))
            dist = np.sort(np.delete(dist, i))[:10]
            assert got[i] == pytest.approx(-1 / np.mean(np.log(dist / dist[-1])), rel=1e-12)
            assert got[i] == lid_score(X64[i], cfg, sample_id=ref.sample_ids[i])

    def test_cosine_metric(self):
        gen = np.random.default_rng(3)
        ref = make_set(gen.standard_normal((100, 4)) + 3, np.zeros(100, dtype=int))
        assert lid_score(np.full(4, 3.0), LidConfig(ref, 10), metric="cosine") > 0

    def test_config_validation(self):
        ref = make_set(np.eye(3), [0, 0, 0])
        with pytest.raises(InsufficientReferencesError):
            LidConfig(ref, 3)
        with pytest.raises(InvalidConfigError):
            LidConfig(ref, 1)


def two_class_symmetric():
    vecs = [[-1, 0], [1, 0], [4, 1], [6, 1]]
    return make_set(vecs, [0, 0, 1, 1])


class TestGaussianModel:
    def test_hand_computed_covariance(self):
        model = fit_gaussian_model(two_class_symmetric(), ridge=0.5)
        # Scatter along e1 is 1 + 1 + 1 + 1 = 4, divided by N - K = 2.
        np.testing.assert_array_equal(model.shared_covariance, [[2.5, 0.0], [0.0, 0.5]])
        np.testing.assert_array_equal(model.class_means, [[0, 0], [5, 1]])
        assert model.regularization == 0.5

    def test_zero_variance_with_unit_ridge(self):
        s = make_set([[1, 2, 3]] * 2 + [[4, 5, 6]] * 2, [0, 0, 1, 1])
        np.testing.assert_array_equal(fit_gaussian_model(s, ridge=1.0).shared_covariance, np.eye(3))

    def test_zero_variance_default_ridge_is_singular(self):
        s = make_set([[1, 2]] * 2 + [[4, 5]] * 2, [0, 0, 1, 1])
        with pytest.raises(SingularCovarianceError):
            fit_gaussian_model(s)

    def test_matches_textbook_pooled_covariance(self):
        gen = np.random.default_rng(0)
        labels = np.repeat(np.arange(3), [40, 55, 70])
        X = gen.standard_normal((labels.size, 16)) @ gen.standard_normal((16, 16)) + labels[:, None]
        s = make_set(X, labels)
        model = fit_gaussian_model(s, ridge=0.0)
        X64 = s.vectors.astype(np.float64)
        oracle = sum((np.sum(labels == c) - 1) * np.cov(X64[labels == c], rowvar=False) for c in range(3))
        oracle /= labels.size - 3
        np.testing.assert_allclose(model.shared_covariance, oracle, rtol=0, atol=1e-10)

    def test_default_ridge(self):
        gen = np.random.default_rng(1)
        labels = np.repeat([0, 1], 30)
        s = make_set(gen.standard_normal((60, 4)), labels)
        base = fit_gaussian_model(s, ridge=0.0).shared_covariance
        model = fit_gaussian_model(s)
        assert model.regularization == pytest.approx(1e-3 * np.trace(base) / 4, rel=1e-12)

    def test_errors(self):
        with pytest.raises(EmptyClassError):
            fit_gaussian_model(make_set([[0, 0], [1, 1], [2, 2]], [0, 0, 1]))
        with pytest.raises(AdversarialInCalibrationError):
            fit_gaussian_model(make_set([[0, 0], [1, 1]] * 2, [0, 0, 1, 1], truth=[0, 1, 0, 0],
                                        ids=list("abcd")))
        with pytest.raises(SingularCovarianceError):
            GaussianClassModel(np.zeros((1, 2)), np.array([[1.0, 0.0], [0.0, -1.0]]), 0.0)

    def test_positive_definite_with_ridge(self):
        gen = np.random.default_rng(2)
        for d in (2, 8, 32):
            labels = np.repeat([0, 1], 5)  # N - K < d for d=32: rank deficient before ridge
            s = make_set(gen.standard_normal((10, d)), labels)
            cov = fit_gaussian_model(s, ridge=1e-3).shared_covariance
            assert np.array_equal(cov, cov.T)
            assert np.linalg.eigvalsh(cov).min() > 0


class TestMahalanobisConfidence:
    def test_identity_covariance(self):
        gen = np.random.default_rng(0)
        means = gen.standard_normal((3, 5))
        model = GaussianClassModel(means, np.eye(5), 0.0)
        z = gen.standard_normal(5)
        expected = -min(((z - m) ** 2).sum() for m in means)
        assert mahalanobis_confidence(z, model) == pytest.approx(expected, rel=1e-12)

    def test_class_mean_scores_zero(self):
        model = fit_gaussian_model(two_class_symmetric(), ridge=0.1)
        assert mahalanobis_confidence(model.class_means[1], model) == 0.0

    def test_matches_explicit_inverse(self):
        gen = np.random.default_rng(1)
        A = gen.standard_normal((8, 8))
        cov = A @ A.T + 0.5 * np.eye(8)
        means = gen.standard_normal((3, 8))
        model = GaussianClassModel(means, cov, 0.0)
        inv = np.linalg.inv(cov)
        for _ in range(20):
            z = gen.standard_normal(8) * 2
            oracle = max(-(z - m) @ inv @ (z - m) for m in means)
            assert mahalanobis_confidence(z, model) == pytest.approx(oracle, rel=1e-8, abs=1e-8)

    def test_affine_invariance_after_refit(self):
        gen = np.random.default_rng(2)
        for _ in range(10):
            d = int(gen.integers(2, 9))
            labels = np.repeat(np.arange(3), 15)
            X = gen.standard_normal((45, d)) + 3 * labels[:, None]
            A = gen.standard_normal((d, d)) + 2 * np.eye(d)
            b = gen.standard_normal(d)
            s = make_set(X, labels)
            X64 = s.vectors.astype(np.float64)
            # Build the transformed set from float32-exact inputs, fit both with no ridge.
            model = fit_gaussian_model(s, ridge=0.0)
            Y = X64 @ A.T + b
            mY = GaussianClassModel(*_raw_fit(Y, labels, 3), 0.0)
            mX = GaussianClassModel(*_raw_fit(X64, labels, 3), 0.0)
            np.testing.assert_allclose(mX.shared_covariance, model.shared_covariance, atol=1e-12)
            for z in gen.standard_normal((5, d)):
                assert mahalanobis_confidence(A @ z + b, mY) == pytest.approx(
                    mahalanobis_confidence(z, mX), rel=1e-7, abs=1e-9)

    def test_batch_matches_single(self, small_synth):
        model = fit_gaussian_model(small_synth.calibration)
        batch = mahalanobis_confidences(small_synth.test, model)
        for i in (0, 13, 200):
            assert batch[i] == pytest.approx(
                mahalanobis_confidence(small_synth.test.vectors[i], model), rel=1e-12)


def _raw_fit(X, labels, K):
    from rsad.baselines import pooled_covariance
    return pooled_covariance(X, labels, K)


class TestOneClass:
    def test_examples(self):
        cal = fit_one_class(np.arange(1, 101), higher_is_anomalous=True)
        assert cal.anomaly(1000) == 1.0
        assert cal.anomaly(1) == 0.0
        assert abs(cal.anomaly(50.5) - 0.5) <= 1 / 100

    def test_lower_is_anomalous(self):
        cal = fit_one_class(np.arange(1, 101), higher_is_anomalous=False)
        assert cal.anomaly(-5) == 1.0 and cal.anomaly(100) == 0.0

    def test_monotone(self):
        gen = np.random.default_rng(0)
        for flag in (True, False):
            cal = fit_one_class(gen.standard_normal(50), flag)
            q = np.sort(gen.standard_normal(500) * 2)
            a = cal.anomaly(q if flag else q[::-1])
            assert np.all(np.diff(a) >= 0)
            assert a.min() >= 0 and a.max() <= 1

    def test_sorted_reference(self):
        cal = fit_one_class([5, 3, 9, 1, 2, 8, 7, 6, 4, 0])
        assert cal.reference_scores.tolist() == list(range(10))

    def test_too_few(self):
        with pytest.raises(TooFewScoresError):
            fit_one_class(range(9))


def test_fitted_baselines_on_synthetic(small_synth):
    truth = small_synth.test.truth.astype(int)
    for det in (LidDetector(k_neighbors=20), MahalanobisDetector()):
        det.fit(small_synth.calibration)
        raw = det.raw_scores(small_synth.test)
        assert raw.shape == (len(small_synth.test),) and np.all(np.isfinite(raw))
        a = det.calibration.anomaly(raw)
        assert np.all((a >= 0) & (a <= 1))
        oriented = det.calibration.oriented(raw)
        # both baselines separate this easy geometry better than chance
        assert auc_from_arrays(oriented, truth) > 0.6

def test_unfitted_baselines_raise(small_synth):
    with pytest.raises(RuntimeError):
        LidDetector().raw_scores(small_synth.test)
    with pytest.raises(RuntimeError):
        MahalanobisDetector().raw_scores(small_synth.test)
