import numpy as np
import pytest

from vadlite.errors import ValidationError
from vadlite.features import FeatureGrid
from vadlite.gaussian import (
    DiagGaussianGrid,
    FullGaussianGrid,
    fit_diag,
    fit_full,
    load_model,
    mahalanobis_diag,
    mahalanobis_full,
    model_value_bytes,
    save_model,
    score_grid,
    KIND_DIAG,
    KIND_FULL,
)


def grids_from_samples(samples):
    """One-position grids (1x1xd) from an (N, d) sample array."""
    return [FeatureGrid(np.asarray(s, dtype=np.float32).reshape(1, 1, -1)) for s in samples]


def brute_force_cov(samples):
    """Independent unbiased covariance oracle: explicit double loop."""
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape
    mu = samples.sum(axis=0) / n
    cov = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            acc = 0.0
            for s in samples:
                acc += (s[a] - mu[a]) * (s[b] - mu[b])
            cov[a, b] = acc / (n - 1)
    return mu, cov


class TestFitFull:
    def test_identical_grids_give_regularizer_identity(self):
        g = np.random.default_rng(0).standard_normal((2, 3, 4)).astype(np.float32)
        model = fit_full([FeatureGrid(g)] * 5, regularizer=0.5)
        for i in range(2):
            for j in range(3):
                np.testing.assert_allclose(model.cov[i, j], 0.5 * np.eye(4), atol=1e-6)

    def test_hand_computed_two_dim(self):
        # collinear samples: singular Sigma, so skip the inversion
        samples = [(1, 2), (3, 4), (5, 6)]
        model = fit_full(grids_from_samples(samples), regularizer=0.0, compute_precision=False)
        np.testing.assert_allclose(model.mean[0, 0], [3, 4])
        np.testing.assert_allclose(model.cov[0, 0], [[4, 4], [4, 4]], atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        samples = rng.standard_normal((50, 3))
        mu, cov = brute_force_cov(samples)
        model = fit_full(grids_from_samples(samples), regularizer=0.0)
        np.testing.assert_allclose(model.mean[0, 0], mu, atol=1e-6)
        np.testing.assert_allclose(model.cov[0, 0], cov, atol=1e-6)

    def test_precision_is_inverse(self):
        rng = np.random.default_rng(4)
        model = fit_full(grids_from_samples(rng.standard_normal((20, 4))), regularizer=0.01)
        prod = model.cov[0, 0] @ model.precision[0, 0]
        np.testing.assert_allclose(prod, np.eye(4), atol=1e-4)

    def test_symmetry_invariant(self):
        rng = np.random.default_rng(5)
        model = fit_full(grids_from_samples(rng.standard_normal((30, 5))), regularizer=0.01)
        np.testing.assert_allclose(model.cov[0, 0], model.cov[0, 0].T, rtol=1e-6)

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            fit_full(grids_from_samples([(1.0, 2.0)]), regularizer=0.01)


class TestFitDiag:
    def test_hand_computed(self):
        model = fit_diag(grids_from_samples([(1, 2), (3, 4), (5, 6)]), epsilon=0.01)
        np.testing.assert_allclose(model.mean[0, 0], [3, 4])
        np.testing.assert_allclose(model.var[0, 0], [4.01, 4.01], atol=1e-12)

    def test_identical_samples_floor_at_epsilon(self):
        model = fit_diag(grids_from_samples([(2.0, 7.0)] * 6), epsilon=0.01)
        np.testing.assert_allclose(model.var[0, 0], [0.01, 0.01], atol=1e-12)

    def test_matches_full_diagonal_plus_epsilon(self):
        rng = np.random.default_rng(6)
        samples = rng.standard_normal((40, 6))
        diag = fit_diag(grids_from_samples(samples), epsilon=0.01)
        full = fit_full(grids_from_samples(samples), regularizer=0.0)
        expected = np.diagonal(full.cov[0, 0]) + 0.01
        np.testing.assert_allclose(diag.var[0, 0], expected, atol=1e-10)

    def test_bad_epsilon(self):
        with pytest.raises(ValidationError):
            fit_diag(grids_from_samples([(1.0,), (2.0,)]), epsilon=0.0)


def diag_model(mean, var):
    mean = np.asarray(mean, dtype=np.float64).reshape(1, 1, -1)
    var = np.asarray(var, dtype=np.float64).reshape(1, 1, -1)
    return DiagGaussianGrid(mean=mean, var=var, epsilon=0.01)


def full_model(mean, cov):
    mean = np.asarray(mean, dtype=np.float64).reshape(1, 1, -1)
    cov = np.asarray(cov, dtype=np.float64)
    return FullGaussianGrid(
        mean=mean, cov=cov[None, None], precision=np.linalg.inv(cov)[None, None], regularizer=0.0
    )


class TestMahalanobis:
    def test_full_zero_at_mean(self):
        model = full_model([1.0, 2.0], np.eye(2))
        assert mahalanobis_full(np.array([1.0, 2.0]), (0, 0), model) == 0.0

    def test_full_identity_cov_is_squared_norm(self):
        model = full_model([0.0, 0.0], np.eye(2))
        assert mahalanobis_full(np.array([3.0, 4.0]), (0, 0), model) == pytest.approx(25.0)

    def test_full_matches_linear_solve_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + 0.5 * np.eye(4)
        mean = rng.standard_normal(4)
        x = rng.standard_normal(4)
        model = full_model(mean, cov)
        oracle = (x - mean) @ np.linalg.solve(cov, x - mean)
        assert mahalanobis_full(x, (0, 0), model) == pytest.approx(oracle, abs=1e-8)

    def test_diag_zero_at_mean(self):
        model = diag_model([3.0, 4.0], [4.0, 4.0])
        assert mahalanobis_diag(np.array([3.0, 4.0]), (0, 0), model) == 0.0

    def test_diag_hand_computed(self):
        model = diag_model([3.0, 4.0], [4.0, 4.0])
        assert mahalanobis_diag(np.array([5.0, 4.0]), (0, 0), model) == pytest.approx(1.0)

    def test_diag_equals_full_on_diagonal_cov(self):
        rng = np.random.default_rng(8)
        var = rng.uniform(0.5, 2.0, size=5)
        mean = rng.standard_normal(5)
        x = rng.standard_normal(5)
        dm = diag_model(mean, var)
        fm = full_model(mean, np.diag(var))
        a = mahalanobis_diag(x, (0, 0), dm)
        b = mahalanobis_full(x, (0, 0), fm)
        assert a == pytest.approx(b, rel=1e-8)

    def test_diag_additivity_over_dims(self):
        rng = np.random.default_rng(9)
        mean = rng.standard_normal(4)
        var = rng.uniform(0.5, 2.0, 4)
        x = rng.standard_normal(4)
        total = mahalanobis_diag(x, (0, 0), diag_model(mean, var))
        parts = sum(
            mahalanobis_diag(np.array([x[k]]), (0, 0), diag_model([mean[k]], [var[k]]))
            for k in range(4)
        )
        assert total == pytest.approx(parts, rel=1e-12)

    def test_diag_quadratic_scaling(self):
        rng = np.random.default_rng(10)
        mean = rng.standard_normal(3)
        var = rng.uniform(0.5, 2.0, 3)
        delta = rng.standard_normal(3)
        model = diag_model(mean, var)
        base = mahalanobis_diag(mean + delta, (0, 0), model)
        scaled = mahalanobis_diag(mean + 2.5 * delta, (0, 0), model)
        assert scaled == pytest.approx(2.5**2 * base, rel=1e-10)

    def test_dimension_mismatch(self):
        model = diag_model([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(ValidationError):
            mahalanobis_diag(np.zeros(3), (0, 0), model)

    def test_position_out_of_range(self):
        model = diag_model([0.0], [1.0])
        with pytest.raises(ValidationError):
            mahalanobis_diag(np.zeros(1), (1, 0), model)


class TestScoreGrid:
    def test_zero_at_means(self):
        rng = np.random.default_rng(11)
        samples = rng.standard_normal((10, 2, 2, 3)).astype(np.float32)
        model = fit_diag([FeatureGrid(s) for s in samples])
        scores = score_grid(FeatureGrid(model.mean.astype(np.float32)), model)
        np.testing.assert_allclose(scores, 0.0, atol=1e-10)

    def test_single_off_mean_patch_is_local(self):
        rng = np.random.default_rng(12)
        samples = rng.standard_normal((10, 3, 3, 2)).astype(np.float32)
        model = fit_diag([FeatureGrid(s) for s in samples])
        query = model.mean.astype(np.float32).copy()
        query[1, 2] += 5.0
        scores = score_grid(FeatureGrid(query), model)
        nonzero = np.argwhere(scores > 1e-9)
        assert nonzero.tolist() == [[1, 2]]

    def test_matches_pointwise_calls(self):
        rng = np.random.default_rng(13)
        samples = rng.standard_normal((8, 2, 3, 4)).astype(np.float32)
        grids = [FeatureGrid(s) for s in samples]
        query = FeatureGrid(rng.standard_normal((2, 3, 4)).astype(np.float32))
        for model, dist in ((fit_diag(grids), mahalanobis_diag), (fit_full(grids), mahalanobis_full)):
            scores = score_grid(query, model)
            for i in range(2):
                for j in range(3):
                    expected = dist(query.patches[i, j].astype(np.float64), (i, j), model)
                    assert scores[i, j] == pytest.approx(expected, rel=1e-10)

    def test_shape_mismatch(self):
        model = diag_model([0.0], [1.0])
        with pytest.raises(ValidationError):
            score_grid(FeatureGrid(np.zeros((2, 2, 1), np.float32)), model)


class TestSerialization:
    def test_diag_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        model = fit_diag([FeatureGrid(rng.standard_normal((2, 2, 3)).astype(np.float32)) for _ in range(5)])
        path = str(tmp_path / "m.vadg")
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, DiagGaussianGrid)
        np.testing.assert_allclose(back.mean, model.mean, atol=1e-6)
        np.testing.assert_allclose(back.var, model.var, atol=1e-6)
        assert back.epsilon == pytest.approx(model.epsilon)

    def test_full_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        model = fit_full([FeatureGrid(rng.standard_normal((2, 2, 3)).astype(np.float32)) for _ in range(6)])
        path = str(tmp_path / "m.vadg")
        save_model(model, path)
        back = load_model(path)
        assert isinstance(back, FullGaussianGrid)
        np.testing.assert_allclose(back.cov, model.cov, atol=1e-5)

    def test_storage_sizes(self, tmp_path):
        # diag stores 8*d value bytes per position, full 4*d + 8*d^2
        assert model_value_bytes(KIND_DIAG, 1, 1, 2) == 16
        assert model_value_bytes(KIND_FULL, 1, 1, 2) == 8 + 32
        rng = np.random.default_rng(16)
        model = fit_diag([FeatureGrid(rng.standard_normal((1, 1, 2)).astype(np.float32)) for _ in range(3)])
        path = str(tmp_path / "m.vadg")
        n = save_model(model, path)
        from vadlite.gaussian import HEADER_BYTES

        assert n == HEADER_BYTES + model_value_bytes(KIND_DIAG, 1, 1, 2)
