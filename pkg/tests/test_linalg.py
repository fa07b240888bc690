import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lrinfer.errors import ValidationError
from lrinfer.linalg import (
    gram_pinv,
    nuclear_norm,
    numerical_rank,
    projector,
    row_norm_max,
    svt,
    thin_svd,
)

from oracles import nuclear_subgradient, ridge_projector, subgradient_descent

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def mats(m, n):
    return arrays(np.float64, (m, n), elements=finite)


class TestThinSVD:
    def test_diagonal(self):
        svd = thin_svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(svd.s, [3, 1])

    def test_zero_matrix(self):
        assert np.all(thin_svd(np.zeros((3, 4))).s == 0)

    def test_random_against_gram_eigenvalues(self, rng):
        A = rng.standard_normal((7, 5))
        svd = thin_svd(A)
        assert np.abs(svd.reconstruct() - A).max() <= 1e-10
        eig = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
        np.testing.assert_allclose(svd.s, np.sqrt(eig), atol=1e-8)

    def test_sign_convention(self, rng):
        svd = thin_svd(rng.standard_normal((6, 4)))
        for k in range(4):
            col = svd.U[:, k]
            assert col[np.argmax(np.abs(col))] >= 0

    def test_sign_convention_is_deterministic_under_input_sign(self, rng):
        A = rng.standard_normal((5, 3))
        a, b = thin_svd(A), thin_svd(-A)
        np.testing.assert_allclose(a.U, b.U, atol=1e-12)
        np.testing.assert_allclose(a.V, -b.V, atol=1e-12)

    def test_truncated(self, rng):
        svd = thin_svd(rng.standard_normal((6, 4)), k=2)
        assert svd.U.shape == (6, 2) and svd.V.shape == (4, 2)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_rejects_non_finite(self, bad):
        A = np.ones((2, 2))
        A[0, 1] = bad
        with pytest.raises(ValidationError):
            thin_svd(A)

    @settings(max_examples=40, deadline=None)
    @given(mats(6, 4))
    def test_orthonormal_and_sorted(self, A):
        svd = thin_svd(A)
        assert np.abs(svd.U.T @ svd.U - np.eye(4)).max() <= 1e-10 or svd.s[-1] == 0
        assert np.abs(svd.V.T @ svd.V - np.eye(4)).max() <= 1e-10
        assert np.all(np.diff(svd.s) <= 1e-12)
        assert np.abs(svd.reconstruct() - A).max() <= 1e-8 * (1 + svd.s[0])


class TestProjector:
    def test_basis_vector(self):
        np.testing.assert_allclose(projector(np.array([[1.0], [0], [0]])), np.diag([1.0, 0, 0]))

    def test_orthonormal_columns(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        np.testing.assert_allclose(projector(Q), Q @ Q.T, atol=1e-12)

    def test_duplicate_direction(self, rng):
        b = rng.standard_normal((5, 1))
        P = projector(np.hstack([b, 2 * b]))
        np.testing.assert_allclose(P, ridge_projector(b), atol=1e-10)
        assert numerical_rank(np.hstack([b, 2 * b])) == 1

    def test_zero_matrix_gives_zero(self):
        assert not projector(np.zeros((4, 2))).any()

    @settings(max_examples=40, deadline=None)
    @given(mats(6, 3))
    def test_idempotent_symmetric(self, B):
        P = projector(B)
        assert np.abs(P - P.T).max() <= 1e-10
        assert np.abs(P @ P - P).max() <= 1e-10
        assert round(np.trace(P)) == numerical_rank(B)

    def test_invariant_under_recombination(self, rng):
        for _ in range(20):
            B = rng.standard_normal((8, 3))
            A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
            assert np.abs(projector(B) - projector(B @ A)).max() <= 1e-9

    def test_gram_pinv_full_rank(self, rng):
        B = rng.standard_normal((9, 3))
        np.testing.assert_allclose(gram_pinv(B), np.linalg.inv(B.T @ B), rtol=1e-10)

    def test_gram_pinv_rank_deficient(self, rng):
        b = rng.standard_normal((6, 1))
        B = np.hstack([b, b])
        np.testing.assert_allclose(gram_pinv(B), np.linalg.pinv(B.T @ B), atol=1e-10)


class TestSVT:
    def test_diagonal_shrinkage(self):
        np.testing.assert_allclose(svt(np.diag([3.0, 1.0]), 1.0), np.diag([2.0, 0.0]), atol=1e-12)

    def test_zero_threshold_is_identity(self, rng):
        A = rng.standard_normal((5, 4))
        assert np.abs(svt(A, 0.0) - A).max() <= 1e-10

    def test_negative_threshold(self):
        with pytest.raises(ValidationError):
            svt(np.eye(2), -0.1)

    def test_matches_subgradient_oracle(self, rng):
        A = rng.standard_normal((5, 4))
        tau = 0.7

        def f(Z):
            return 0.5 * np.sum((Z - A) ** 2) + tau * nuclear_norm(Z)

        def g(Z):
            return Z - A + tau * nuclear_subgradient(Z)

        ours = f(svt(A, tau))
        best = min(
            subgradient_descent(f, g, rng.standard_normal((5, 4)), 4000, strongly_convex=1.0)[1]
            for _ in range(10)
        )
        assert ours <= best + 1e-6
        assert best - ours <= 1e-3  # the oracle actually got close

    @settings(max_examples=40, deadline=None)
    @given(mats(5, 4), mats(5, 4), st.floats(0, 5))
    def test_non_expansive(self, A, B, tau):
        assert np.linalg.norm(svt(A, tau) - svt(B, tau)) <= np.linalg.norm(A - B) + 1e-9

    @settings(max_examples=40, deadline=None)
    @given(mats(5, 4), st.floats(0, 5))
    def test_nuclear_norm_of_output(self, A, tau):
        s = np.linalg.svd(A, compute_uv=False)
        assert abs(nuclear_norm(svt(A, tau)) - np.maximum(s - tau, 0).sum()) <= 1e-9 * (1 + s.sum())


def test_row_norm_max():
    assert row_norm_max(np.array([[3.0, 4.0], [1.0, 0.0]])) == 5.0
