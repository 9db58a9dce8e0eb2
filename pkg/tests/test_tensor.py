import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkcast.tensor import (
    CooParseError,
    SparseTensor3,
    frobenius_norm,
    load_coo,
    log_preprocess,
    mttkrp,
    save_coo,
)


def write(tmp_path, text, name="z.coo"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCoo:
    def test_duplicates_coalesce_by_sum(self, tmp_path):
        z = load_coo(write(tmp_path, "1 1 1 1.0\n1 1 1 2.0\n"))
        assert z.nnz == 1
        assert z.values[0] == 3.0
        assert (z.i[0], z.j[0], z.t[0]) == (0, 0, 0)

    def test_empty_file_with_dims(self, tmp_path):
        z = load_coo(write(tmp_path, ""), dims=(2, 2, 2))
        assert z.dims == (2, 2, 2)
        assert z.nnz == 0

    def test_dims_inferred_from_maxima(self, tmp_path):
        z = load_coo(write(tmp_path, "1 2 1 1.0\n2 1 2 1.0\n"))
        assert z.dims == (2, 2, 2)

    def test_malformed_line_names_line_number(self, tmp_path):
        with pytest.raises(CooParseError, match="line 2"):
            load_coo(write(tmp_path, "1 1 1 1.0\n1 1 oops 1.0\n"))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(CooParseError, match="line 1"):
            load_coo(write(tmp_path, "1 1 1\n"))

    def test_index_beyond_declared_dims(self, tmp_path):
        with pytest.raises(CooParseError, match="line 1"):
            load_coo(write(tmp_path, "5 1 1 1.0\n"), dims=(2, 2, 2))

    def test_nonfinite_value(self, tmp_path):
        with pytest.raises(CooParseError, match="line 1"):
            load_coo(write(tmp_path, "1 1 1 inf\n"))

    def test_zero_index_rejected(self, tmp_path):
        with pytest.raises(CooParseError, match="1-based"):
            load_coo(write(tmp_path, "0 1 1 1.0\n"))

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        z = SparseTensor3.from_dense(rng.random((4, 3, 5)) * (rng.random((4, 3, 5)) < 0.4))
        path = tmp_path / "rt.coo"
        save_coo(z, path)
        back = load_coo(path, dims=z.dims)
        np.testing.assert_array_equal(back.i, z.i)
        np.testing.assert_array_equal(back.j, z.j)
        np.testing.assert_array_equal(back.t, z.t)
        np.testing.assert_array_equal(back.values, z.values)

    def test_writer_sorted_by_t_i_j(self, tmp_path):
        z = SparseTensor3.from_coords(
            (2, 2, 2), [1, 0, 0], [0, 1, 0], [1, 0, 0], [1.0, 2.0, 3.0]
        )
        path = tmp_path / "sorted.coo"
        save_coo(z, path)
        lines = path.read_text().splitlines()
        assert lines == ["1 1 1 3", "1 2 1 2", "2 1 2 1"]


class TestConstruction:
    def test_out_of_range_index(self):
        with pytest.raises(ValueError, match="out of range"):
            SparseTensor3.from_coords((2, 2, 2), [2], [0], [0], [1.0])

    def test_nonfinite_value(self):
        with pytest.raises(ValueError, match="finite"):
            SparseTensor3.from_coords((2, 2, 2), [0], [0], [0], [np.nan])

    def test_entries_immutable(self):
        z = SparseTensor3.from_coords((2, 2, 2), [0], [0], [0], [1.0])
        with pytest.raises(ValueError):
            z.values[0] = 5.0

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 3), st.integers(0, 3), st.integers(0, 3),
                st.floats(-10, 10, allow_nan=False),
            ),
            max_size=30,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_coalescing_matches_dense_accumulation(self, entries):
        dense = np.zeros((4, 4, 4))
        for i, j, t, v in entries:
            dense[i, j, t] += v
        z = SparseTensor3.from_coords(
            (4, 4, 4),
            [e[0] for e in entries],
            [e[1] for e in entries],
            [e[2] for e in entries],
            [e[3] for e in entries],
        )
        np.testing.assert_allclose(z.to_dense(), dense, atol=1e-12)


class TestLogPreprocess:
    def test_count_one_maps_to_one(self):
        z = SparseTensor3.from_coords((1, 1, 1), [0], [0], [0], [1.0])
        assert log_preprocess(z).values[0] == 1.0

    def test_count_e_maps_to_two(self):
        z = SparseTensor3.from_coords((1, 1, 1), [0], [0], [0], [math.e])
        assert log_preprocess(z).values[0] == pytest.approx(2.0, abs=1e-15)

    def test_absent_entries_stay_absent(self):
        z = SparseTensor3.from_coords((3, 3, 3), [0, 1], [0, 1], [0, 1], [2.0, 5.0])
        out = log_preprocess(z)
        assert out.nnz == z.nnz
        np.testing.assert_array_equal(out.i, z.i)
        np.testing.assert_array_equal(out.j, z.j)
        np.testing.assert_array_equal(out.t, z.t)

    def test_nonpositive_value_rejected(self):
        z = SparseTensor3.from_coords((1, 1, 2), [0, 0], [0, 0], [0, 1], [1.0, -2.0])
        with pytest.raises(ValueError, match="positive"):
            log_preprocess(z)

    def test_not_idempotent(self):
        z = SparseTensor3.from_coords((1, 1, 1), [0], [0], [0], [math.e])
        once = log_preprocess(z)
        twice = log_preprocess(once)
        assert twice.values[0] != once.values[0]


class TestFrobeniusNorm:
    def test_three_four_five(self):
        z = SparseTensor3.from_coords(
            (2, 2, 2), [0, 1], [0, 1], [0, 1], [3.0, 4.0]
        )
        assert frobenius_norm(z) == pytest.approx(5.0, rel=1e-15)

    def test_zero_tensor(self):
        z = SparseTensor3.from_coords((2, 2, 2), [], [], [], [])
        assert frobenius_norm(z) == 0.0

    def test_identity_matrix(self):
        assert frobenius_norm(np.eye(2)) == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_squared_norm_equals_sum_of_squares(self):
        rng = np.random.default_rng(3)
        dense = rng.standard_normal((5, 4, 3))
        z = SparseTensor3.from_dense(dense)
        assert frobenius_norm(z) ** 2 == pytest.approx(
            float((dense**2).sum()), rel=1e-13
        )


def dense_mttkrp_oracle(dense, A, B, C, mode):
    """Brute-force unfolding times Khatri-Rao, entirely independent of the
    sparse kernel under test."""
    M, N, T = dense.shape
    K = A.shape[1]
    if mode == 1:
        unf = dense.reshape(M, N * T)
        kr = np.zeros((N * T, K))
        for j in range(N):
            for t in range(T):
                kr[j * T + t] = B[j] * C[t]
    elif mode == 2:
        unf = dense.transpose(1, 0, 2).reshape(N, M * T)
        kr = np.zeros((M * T, K))
        for i in range(M):
            for t in range(T):
                kr[i * T + t] = A[i] * C[t]
    else:
        unf = dense.transpose(2, 0, 1).reshape(T, M * N)
        kr = np.zeros((M * N, K))
        for i in range(M):
            for j in range(N):
                kr[i * N + j] = A[i] * B[j]
    return unf @ kr


class TestMttkrp:
    def test_zero_tensor_gives_zero_matrix(self):
        z = SparseTensor3.from_coords((3, 4, 2), [], [], [], [])
        rng = np.random.default_rng(0)
        factors = (rng.random((3, 2)), rng.random((4, 2)), rng.random((2, 2)))
        out = mttkrp(z, factors, 1)
        assert out.shape == (3, 2)
        assert np.all(out == 0.0)

    def test_rank_one_closed_form(self):
        # z = a (x) b (x) c, mode 1 gives a * (||b||^2 ||c||^2) for K=1 factors
        rng = np.random.default_rng(1)
        a, b, c = rng.random(3), rng.random(3), rng.random(3)
        dense = np.einsum("i,j,t->ijt", a, b, c)
        z = SparseTensor3.from_dense(dense)
        out = mttkrp(z, (a[:, None], b[:, None], c[:, None]), 1)
        expected = a * (b @ b) * (c @ c)
        np.testing.assert_allclose(out[:, 0], expected, rtol=1e-12)
        oracle = dense_mttkrp_oracle(dense, a[:, None], b[:, None], c[:, None], 1)
        np.testing.assert_allclose(out, oracle, rtol=1e-12)

    def test_single_nonzero_entrywise(self):
        z = SparseTensor3.from_coords((2, 2, 2), [1], [0], [1], [2.5])
        rng = np.random.default_rng(2)
        A, B, C = rng.random((2, 1)), rng.random((2, 1)), rng.random((2, 1))
        for mode in (1, 2, 3):
            out = mttkrp(z, (A, B, C), mode)
            oracle = dense_mttkrp_oracle(z.to_dense(), A, B, C, mode)
            np.testing.assert_allclose(out, oracle, rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("mode", [1, 2, 3])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_matches_dense_oracle_on_randoms(self, mode, k):
        rng = np.random.default_rng(10 * mode + k)
        dense = rng.standard_normal((5, 5, 5)) * (rng.random((5, 5, 5)) < 0.5)
        z = SparseTensor3.from_dense(dense)
        A, B, C = (rng.standard_normal((5, k)) for _ in range(3))
        out = mttkrp(z, (A, B, C), mode)
        oracle = dense_mttkrp_oracle(dense, A, B, C, mode)
        scale = max(np.abs(oracle).max(), 1e-30)
        assert np.abs(out - oracle).max() / scale <= 1e-12

    def test_dimension_mismatch(self):
        z = SparseTensor3.from_coords((2, 2, 2), [0], [0], [0], [1.0])
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="do not match"):
            mttkrp(z, (rng.random((3, 1)), rng.random((2, 1)), rng.random((2, 1))), 1)
