import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddmhe.errors import BoundsError, InvalidInputError, ParseError
from ddmhe.numerics import (
    block,
    min_eig_sym,
    parse_matrix_lines,
    pinv,
    rank,
    read_matrix_csv,
    spectral_norm,
    write_matrix_csv,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=8):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def assert_moore_penrose(M, Mp, tol):
    scale = tol * max(spectral_norm(M), 1.0)
    np.testing.assert_allclose(M @ Mp @ M, M, atol=scale)
    np.testing.assert_allclose(Mp @ M @ Mp, Mp, atol=tol * max(spectral_norm(Mp), 1.0))
    np.testing.assert_allclose((M @ Mp).T, M @ Mp, atol=tol)
    np.testing.assert_allclose((Mp @ M).T, Mp @ M, atol=tol)


class TestPinv:
    def test_identity(self):
        np.testing.assert_array_equal(pinv(np.eye(3)), np.eye(3))

    def test_diagonal_with_zero(self):
        np.testing.assert_allclose(pinv([[2, 0], [0, 0]]), [[0.5, 0], [0, 0]])

    def test_full_row_rank_right_inverse(self, rng):
        M = rng.normal(size=(4, 7))
        np.testing.assert_allclose(M @ pinv(M), np.eye(4), atol=1e-10)

    def test_full_column_rank_left_inverse(self, rng):
        M = rng.normal(size=(7, 3))
        np.testing.assert_allclose(pinv(M) @ M, np.eye(3), atol=1e-10)

    def test_zero_matrix(self):
        np.testing.assert_array_equal(pinv(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            pinv([[1.0, np.nan]])

    def test_rejects_negative_tol(self):
        with pytest.raises(InvalidInputError):
            pinv(np.eye(2), tol=-1.0)

    def test_explicit_tol_truncates(self):
        Mp = pinv(np.diag([1.0, 1e-3]), tol=1e-2)
        np.testing.assert_allclose(Mp, np.diag([1.0, 0.0]))

    def test_matches_numpy(self, rng):
        M = rng.normal(size=(5, 3)) @ rng.normal(size=(3, 6))
        np.testing.assert_allclose(pinv(M), np.linalg.pinv(M), atol=1e-10)

    @given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50), st.integers(0, 2**31 - 1))
    def test_moore_penrose_identities(self, rows, cols, r, seed):
        # random matrices of prescribed rank, up to 50x50
        g = np.random.default_rng(seed)
        r = min(r, rows, cols)
        M = g.normal(size=(rows, r)) @ g.normal(size=(r, cols))
        assert_moore_penrose(M, pinv(M), 1e-9)

    def test_moore_penrose_large(self, rng):
        for shape in [(50, 50), (50, 20), (13, 50)]:
            M = rng.normal(size=shape)
            assert_moore_penrose(M, pinv(M), 1e-9)


class TestRank:
    def test_identity(self):
        assert rank(np.eye(5)) == 5

    def test_zero(self):
        assert rank(np.zeros((3, 3))) == 0

    def test_rank_one(self):
        assert rank([[1, 2], [2, 4]]) == 1

    @given(matrices())
    def test_transpose_invariant(self, M):
        assert rank(M) == rank(M.T)

    def test_low_rank_product(self, rng):
        M = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 9))
        assert rank(M) == 2


class TestMinEig:
    def test_diag(self):
        assert min_eig_sym(np.diag([3.0, 1.0, 7.0])) == pytest.approx(1.0)

    def test_identity(self):
        assert min_eig_sym(np.eye(2)) == pytest.approx(1.0)

    def test_two_by_two(self):
        assert min_eig_sym([[2, 1], [1, 2]]) == pytest.approx(1.0)

    def test_absorbs_roundoff(self):
        M = np.array([[2.0, 1.0], [1.0 + 1e-14, 2.0]])
        assert min_eig_sym(M) == pytest.approx(1.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidInputError):
            min_eig_sym([[1.0, 2.0], [0.0, 1.0]])

    def test_rejects_nonsquare(self):
        with pytest.raises(InvalidInputError):
            min_eig_sym(np.ones((2, 3)))


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(4)) == pytest.approx(1.0)

    def test_negative_diag(self):
        assert spectral_norm(np.diag([-5.0, 2.0])) == pytest.approx(5.0)

    def test_single_entry(self):
        assert spectral_norm([[0, 3], [0, 0]]) == pytest.approx(3.0)

    @given(matrices(), st.integers(0, 2**31 - 1))
    def test_submultiplicative(self, M, seed):
        v = np.random.default_rng(seed).normal(size=M.shape[1])
        assert np.linalg.norm(M @ v) <= spectral_norm(M) * np.linalg.norm(v) * (1 + 1e-12) + 1e-12


class TestBlock:
    def test_single_entry(self):
        np.testing.assert_array_equal(block(np.eye(3), 1, 1, 1, 1), [[1.0]])

    def test_lower_corner(self):
        np.testing.assert_array_equal(block(np.eye(3), 2, 3, 2, 3), np.eye(2))

    def test_copy_values(self):
        M = np.array([[1, 2, 3], [4, 5, 6]], dtype=float)
        np.testing.assert_array_equal(block(M, 1, 2, 2, 3), [[2, 3], [5, 6]])

    @pytest.mark.parametrize("idx", [(0, 1, 1, 1), (1, 3, 1, 1), (2, 1, 1, 1), (1, 1, 2, 4)])
    def test_out_of_range(self, idx):
        with pytest.raises(BoundsError):
            block(np.ones((2, 3)), *idx)

    @given(matrices())
    def test_whole_matrix(self, M):
        np.testing.assert_array_equal(block(M, 1, M.shape[0], 1, M.shape[1]), M)


class TestMatrixText:
    def test_round_trip_exact(self, rng, tmp_path):
        M = rng.normal(size=(3, 4)) * 1e-7
        path = tmp_path / "m.csv"
        with open(path, "w") as fh:
            fh.write("% a comment\n")
            write_matrix_csv(fh, M)
        np.testing.assert_array_equal(read_matrix_csv(path), M)

    def test_ragged_rows(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_matrix_lines([(1, "1,2"), (2, "3")])

    def test_bad_number(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_matrix_lines([(1, "1,abc")])

    def test_skips_blank_and_comments(self):
        buf = io.StringIO()
        write_matrix_csv(buf, np.eye(2))
        lines = [(1, "% header"), (2, "")] + [
            (i + 3, t) for i, t in enumerate(buf.getvalue().splitlines())
        ]
        np.testing.assert_array_equal(parse_matrix_lines(lines), np.eye(2))
