import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from linkcast.svd import (
    SvdConvergenceError,
    SvdFactors,
    dense_svd,
    load_svd,
    save_svd,
    truncated_svd,
)

# classical value computed once with 50-digit arithmetic
HILBERT4_SIGMA1 = 1.5002142800592428


def assert_valid_factors(f, m, n):
    k = f.rank
    assert f.U.shape == (m, k)
    assert f.V.shape == (n, k)
    assert np.abs(f.U.T @ f.U - np.eye(k)).max() <= 1e-8
    assert np.abs(f.V.T @ f.V - np.eye(k)).max() <= 1e-8
    assert np.all(f.sigma > 0)
    assert np.all(np.diff(f.sigma) <= 1e-12)


class TestDenseSvd:
    def test_scalar_matrix(self):
        f = dense_svd(np.array([[-3.5]]))
        assert f.sigma[0] == pytest.approx(3.5)

    def test_orthogonal_matrix_unit_spectrum(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
        f = dense_svd(q)
        np.testing.assert_allclose(f.sigma, np.ones(3), rtol=1e-12)

    def test_hilbert_leading_value(self):
        H = 1.0 / (np.arange(4)[:, None] + np.arange(4)[None, :] + 1)
        f = dense_svd(H)
        assert f.sigma[0] == pytest.approx(HILBERT4_SIGMA1, rel=1e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 6))
        f = dense_svd(x)
        err = np.linalg.norm(x - (f.U * f.sigma) @ f.V.T)
        assert err <= 1e-10 * np.linalg.norm(x)
        assert_valid_factors(f, 8, 6)

    def test_guard_rail(self):
        with pytest.raises(ValueError, match="guard"):
            dense_svd(np.zeros((2001, 2001)))


class TestTruncatedSvd:
    def test_diagonal_matrix(self):
        f = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(f.sigma, [3.0, 2.0], rtol=1e-12)
        # canonical sign makes U and V the identity columns exactly
        np.testing.assert_allclose(f.U, np.eye(3)[:, :2], atol=1e-10)
        np.testing.assert_allclose(f.V, np.eye(3)[:, :2], atol=1e-10)

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(7), rng.standard_normal(5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # rank deflation is expected here
            f = truncated_svd(np.outer(a, b), 1)
        assert f.sigma[0] == pytest.approx(
            np.linalg.norm(a) * np.linalg.norm(b), rel=1e-10
        )

    def test_random_sparse_matches_dense(self):
        rng = np.random.default_rng(3)
        dense = rng.standard_normal((20, 15)) * (rng.random((20, 15)) < 0.3)
        f = truncated_svd(sp.csr_matrix(dense), 5)
        ref = dense_svd(dense)
        np.testing.assert_allclose(f.sigma, ref.sigma[:5], rtol=1e-8)
        assert_valid_factors(f, 20, 15)

    def test_agrees_columnwise_with_dense_for_simple_spectra(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((12, 9))
        f = truncated_svd(x, 4)
        ref = dense_svd(x)
        np.testing.assert_allclose(f.U, ref.U[:, :4], atol=1e-7)
        np.testing.assert_allclose(f.V, ref.V[:, :4], atol=1e-7)

    def test_eckart_young(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            x = rng.standard_normal((10, 8))
            ref = dense_svd(x)
            K = 3
            f = truncated_svd(x, K, seed=trial)
            resid = np.linalg.norm(x - (f.U * f.sigma) @ f.V.T) ** 2
            tail = float((ref.sigma[K:] ** 2).sum())
            assert resid == pytest.approx(tail, rel=1e-8)

    def test_sigma_monotone_in_k(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((10, 10))
        f3 = truncated_svd(x, 3)
        f4 = truncated_svd(x, 4)
        np.testing.assert_allclose(f4.sigma[:3], f3.sigma, rtol=1e-6)

    def test_clustered_spectrum_subspace(self):
        # orthogonal matrix: all singular values 1; compare subspaces via
        # principal angles, not individual vectors
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        f = truncated_svd(q, 3)
        np.testing.assert_allclose(f.sigma, np.ones(3), rtol=1e-9)
        assert_valid_factors(f, 6, 6)
        # U must equal q @ V on the recovered subspace (x V = U Sigma)
        np.testing.assert_allclose(q @ f.V, f.U * f.sigma, atol=1e-9)

    def test_rank_deficient_reports_deflation(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((9, 2)) @ rng.standard_normal((2, 7))
        with pytest.warns(UserWarning, match="deflation"):
            f = truncated_svd(x, 5)
        assert f.rank == 2
        ref = dense_svd(x)
        np.testing.assert_allclose(f.sigma, ref.sigma, rtol=1e-9)

    def test_residual_contract(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((30, 20))
        tol = 1e-10
        f = truncated_svd(x, 6, tol=tol)
        for p in range(6):
            resid = np.linalg.norm(x @ f.V[:, p] - f.sigma[p] * f.U[:, p])
            assert resid <= tol * f.sigma[0] * 10  # slack for the sign flips

    def test_convergence_error_carries_best_iterate(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((40, 30))
        with pytest.raises(SvdConvergenceError) as info:
            truncated_svd(x, 8, tol=1e-15, max_iter=9)
        best = info.value.best
        assert isinstance(best, SvdFactors)
        assert best.rank >= 1

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            truncated_svd(np.eye(3), 4)
        with pytest.raises(ValueError):
            truncated_svd(np.eye(3), 0)

    def test_seed_determinism(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((15, 12))
        f1 = truncated_svd(x, 4, seed=123)
        f2 = truncated_svd(x, 4, seed=123)
        np.testing.assert_array_equal(f1.U, f2.U)
        np.testing.assert_array_equal(f1.sigma, f2.sigma)
        np.testing.assert_array_equal(f1.V, f2.V)


class TestFactorIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        f = dense_svd(rng.standard_normal((6, 4)))
        save_svd(f, tmp_path / "factors")
        back = load_svd(tmp_path / "factors")
        np.testing.assert_array_equal(back.U, f.U)
        np.testing.assert_array_equal(back.sigma, f.sigma)
        np.testing.assert_array_equal(back.V, f.V)

    def test_header_format(self, tmp_path):
        f = dense_svd(np.diag([2.0, 1.0]))
        save_svd(f, tmp_path / "d")
        first = (tmp_path / "d" / "U.txt").read_text().splitlines()[0]
        assert first == "2 2"
        sigma_lines = (tmp_path / "d" / "sigma.txt").read_text().splitlines()
        assert len(sigma_lines) == 2
