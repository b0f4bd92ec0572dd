import numpy as np
import pytest

from earfit.errors import DegenerateVarianceError, ModelConstructionError
from earfit.models import (ColourModel, MorphableModel, WhiteningTransform, build_pca,
                           reconstruct_colour, reconstruct_shape, unwhiten)


def _eig_oracle(samples):
    """Independent PCA oracle: eigendecomposition of the sample covariance."""
    mean = samples.mean(axis=0)
    c = samples - mean
    cov = c.T @ c / (samples.shape[0] - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    return mean, w[order], v[:, order]


class TestBuildPca:
    def test_identical_samples_raise(self):
        samples = np.ones((5, 4)) * 3.7
        with pytest.raises(DegenerateVarianceError):
            build_pca(samples, k=1)

    def test_rank_one_line(self):
        # points on y = 2x, variance 5 along the line
        rng = np.random.default_rng(0)
        s = rng.normal(0.0, 1.0, size=200)
        s = (s - s.mean()) / s.std(ddof=1) * np.sqrt(5.0)
        samples = np.stack([s, 2.0 * s], axis=1)
        mean, basis, wt = build_pca(samples, target_coverage=0.99)
        assert wt.k_white == 1
        assert wt.coverage == pytest.approx(1.0, abs=1e-12)
        o_mean, o_eig, o_vec = _eig_oracle(samples)
        np.testing.assert_allclose(mean, o_mean, atol=1e-12)
        assert abs(abs(basis[:, 0] @ o_vec[:, 0]) - 1.0) < 1e-10
        # whitened training coordinates have unit variance
        coords = (samples - mean) @ basis[:, 0] / wt.sigma[0]
        assert coords.mean() == pytest.approx(0.0, abs=1e-8)
        assert coords.var(ddof=1) == pytest.approx(1.0, abs=1e-6)

    def test_coverage_cut_matches_cumsum_oracle(self):
        # spectrum spanning 8e3 .. 5e-7 geometrically, like a real shape model
        n_dim = 30
        eigvals = np.geomspace(8e3, 5e-7, n_dim)
        rng = np.random.default_rng(1)
        m = 400
        coords = rng.normal(size=(m, n_dim))
        coords = (coords - coords.mean(axis=0)) / coords.std(axis=0, ddof=1)
        q, _ = np.linalg.qr(rng.normal(size=(n_dim + 5, n_dim)))
        samples = (coords * np.sqrt(eigvals)) @ q.T

        target = 0.981
        _, _, wt = build_pca(samples, target_coverage=target)
        # brute-force cumulative-sum oracle over the actual sample spectrum
        _, o_eig, _ = _eig_oracle(samples)
        cum = np.cumsum(o_eig) / o_eig.sum()
        k_oracle = int(np.argmax(cum >= target)) + 1
        assert wt.k_white == k_oracle
        assert wt.coverage == pytest.approx(cum[k_oracle - 1], abs=1e-9)

    def test_fixed_k_and_eigvals_match_oracle(self):
        rng = np.random.default_rng(2)
        samples = rng.normal(size=(50, 8)) * np.array([5, 3, 2, 1, 0.5, 0.2, 0.1, 0.05])
        mean, basis, wt = build_pca(samples, k=4)
        assert wt.k_white == 4
        _, o_eig, o_vec = _eig_oracle(samples)
        np.testing.assert_allclose(wt.sigma**2, o_eig[:4], rtol=1e-8)
        for j in range(4):
            assert abs(abs(basis[:, j] @ o_vec[:, j]) - 1.0) < 1e-8

    def test_coverage_monotone_in_k(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(size=(40, 10))
        covs = [build_pca(samples, k=k)[2].coverage for k in range(1, 8)]
        assert all(b >= a for a, b in zip(covs, covs[1:]))

    def test_bad_arguments(self):
        samples = np.random.default_rng(4).normal(size=(10, 3))
        with pytest.raises(ModelConstructionError):
            build_pca(np.ones((1, 3)), k=1)
        with pytest.raises(ModelConstructionError):
            build_pca(samples * np.nan, k=1)
        with pytest.raises(ValueError):
            build_pca(samples, target_coverage=1.5)
        with pytest.raises(ValueError):
            build_pca(samples)
        with pytest.raises(ValueError):
            build_pca(samples, target_coverage=0.9, k=2)


class TestWhitening:
    @pytest.fixture()
    def wt(self):
        sigma = np.array([3.0, 1.5, 0.25])
        recover = np.zeros((6, 3))
        recover[:3, :3] = np.diag(sigma)
        return WhiteningTransform(recover_matrix=recover, k_white=3, coverage=0.95)

    def test_unwhiten_zero(self, wt):
        np.testing.assert_array_equal(unwhiten(wt, np.zeros(3)), np.zeros(6))

    def test_unwhiten_unit_vector(self, wt):
        np.testing.assert_allclose(unwhiten(wt, np.array([1.0, 0, 0])),
                                   wt.recover_matrix[:, 0], atol=0)

    def test_unwhiten_matches_triple_loop(self, wt):
        rng = np.random.default_rng(5)
        alpha = rng.normal(size=3)
        got = unwhiten(wt, alpha)
        want = np.zeros(6)
        for i in range(6):
            for j in range(3):
                want[i] += wt.recover_matrix[i, j] * alpha[j]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_round_trip(self, wt):
        rng = np.random.default_rng(6)
        alpha = rng.normal(size=3)
        np.testing.assert_allclose(wt.whiten(wt.unwhiten(alpha)), alpha, atol=1e-10)

    def test_length_mismatch(self, wt):
        with pytest.raises(ValueError):
            wt.unwhiten(np.zeros(4))


class TestReconstruct:
    def test_zero_params_give_mean(self, small_model):
        model, colour_model = small_model
        s = reconstruct_shape(model, np.zeros(model.k_white))
        np.testing.assert_array_equal(s.ravel(), model.mean_shape)
        c = reconstruct_colour(colour_model, np.zeros(colour_model.k))
        np.testing.assert_array_equal(c.ravel(), colour_model.mean_colour)

    def test_linearity(self, small_model):
        model, _ = small_model
        e1 = np.zeros(model.k_white)
        e1[0] = 1.0
        mean = model.mean_shape.reshape(-1, 3)
        off_half = reconstruct_shape(model, 0.5 * e1) - mean
        off_full = reconstruct_shape(model, e1) - mean
        np.testing.assert_allclose(off_full, 2.0 * off_half, atol=1e-12)

    def test_matches_dense_multiply_oracle(self, small_model):
        model, colour_model = small_model
        rng = np.random.default_rng(7)
        alpha = rng.normal(size=model.k_white)
        got = reconstruct_shape(model, alpha)
        b = model.shape_basis @ model.whitening.recover_matrix
        want = (model.mean_shape + b @ alpha).reshape(-1, 3)
        np.testing.assert_allclose(got, want, atol=1e-10)

        ac = rng.normal(size=colour_model.k)
        got_c = reconstruct_colour(colour_model, ac)
        want_c = (colour_model.mean_colour + colour_model.colour_basis @ ac).reshape(-1, 3)
        np.testing.assert_allclose(got_c, want_c, atol=1e-12)

    def test_colour_not_clamped(self, small_model):
        _, colour_model = small_model
        big = np.full(colour_model.k, 50.0)
        c = reconstruct_colour(colour_model, big)
        assert c.max() > 1.0 or c.min() < 0.0

    def test_basis_orthogonal(self, small_model):
        model, _ = small_model
        gram = model.shape_basis.T @ model.shape_basis
        np.testing.assert_allclose(gram, np.eye(model.whitening.k_full), atol=1e-8)

    def test_wrong_length_raises(self, small_model):
        model, _ = small_model
        with pytest.raises(ValueError):
            reconstruct_shape(model, np.zeros(model.k_white + 1))


class TestModelValidation:
    def test_landmark_count_enforced(self):
        wt = WhiteningTransform(recover_matrix=np.eye(2), k_white=2, coverage=1.0)
        with pytest.raises(ValueError):
            MorphableModel(mean_shape=np.zeros(9), shape_basis=np.zeros((9, 2)),
                           triangles=np.array([[0, 1, 2]]), whitening=wt,
                           landmark_indices=np.zeros(10, dtype=int))

    def test_triangle_index_range(self):
        wt = WhiteningTransform(recover_matrix=np.eye(2), k_white=2, coverage=1.0)
        with pytest.raises(ValueError):
            MorphableModel(mean_shape=np.zeros(9), shape_basis=np.zeros((9, 2)),
                           triangles=np.array([[0, 1, 5]]), whitening=wt,
                           landmark_indices=np.zeros(55, dtype=int))

    def test_colour_model_coverage_range(self):
        with pytest.raises(ValueError):
            ColourModel(mean_colour=np.zeros(9), colour_basis=np.zeros((9, 2)), coverage=0.0)
