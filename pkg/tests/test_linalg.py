import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from deconfounding import linalg
from deconfounding.errors import InvalidInputError


def _finite_matrices(max_n=7, max_p=6):
    shapes = st.tuples(st.integers(1, max_n), st.integers(1, max_p))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-1e3, 1e3, allow_subnormal=False)))


def test_svd_identity():
    f = linalg.svd(np.eye(3))
    np.testing.assert_allclose(f.d, [1, 1, 1])


def test_svd_diagonal_gives_signed_permutations():
    f = linalg.svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(f.d, [3, 2])
    np.testing.assert_allclose(np.abs(f.U), np.eye(2))
    np.testing.assert_allclose(np.abs(f.V), np.eye(2))


def test_svd_reconstruction_seed7():
    M = np.random.default_rng(7).standard_normal((5, 4))
    f = linalg.svd(M)
    assert np.max(np.abs(f.reconstruct() - M)) < 1e-10
    assert f.U.shape == (5, 4) and f.V.shape == (4, 4)


def test_svd_sign_convention_is_stable():
    M = np.random.default_rng(1).standard_normal((6, 3))
    a, b = linalg.svd(M), linalg.svd(-M)
    # flipping M flips exactly one factor; U keeps its sign convention
    for k in range(3):
        col = a.U[:, k]
        assert col[np.argmax(np.abs(col))] > 0
        assert b.U[np.argmax(np.abs(b.U[:, k])), k] > 0


def test_svd_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        linalg.svd(np.array([[1.0, np.nan]]))


@settings(max_examples=40, deadline=None)
@given(_finite_matrices())
def test_svd_invariants(M):
    f = linalg.svd(M)
    m = min(M.shape)
    assert f.d.shape == (m,)
    assert np.all(np.diff(f.d) <= 1e-12 * max(f.d[0], 1.0))
    assert np.all(f.d >= 0)
    scale = max(f.d[0], 1e-300)
    assert np.max(np.abs(f.reconstruct() - M)) <= 1e-8 * scale + 1e-300
    if f.d[-1] > 1e-8 * scale:
        assert np.max(np.abs(f.U.T @ f.U - np.eye(m))) < 1e-10
        assert np.max(np.abs(f.V.T @ f.V - np.eye(m))) < 1e-10


def test_projector_first_basis_column():
    A = np.zeros((4, 1))
    A[0, 0] = 1.0
    P = linalg.projector_from(A)
    M = np.arange(8.0).reshape(4, 2) + 1
    out = linalg.apply_proj(P, M)
    np.testing.assert_allclose(out[0], M[0])
    np.testing.assert_allclose(out[1:], 0.0)


def test_projector_duplicated_column():
    a = np.random.default_rng(0).standard_normal(5)
    P1 = linalg.projector_from(a[:, None])
    P2 = linalg.projector_from(np.column_stack([a, a]))
    assert P2.rank == 1
    np.testing.assert_allclose(P1.matrix(), P2.matrix(), atol=1e-12)


def test_projector_idempotent_trace_seed3():
    A = np.random.default_rng(3).standard_normal((6, 2))
    Pm = linalg.projector_from(A).matrix()
    assert np.max(np.abs(Pm @ Pm - Pm)) < 1e-10
    assert np.max(np.abs(Pm - Pm.T)) < 1e-10
    assert abs(np.trace(Pm) - 2) < 1e-10


def test_zero_matrix_gives_rank_zero_projector():
    P = linalg.projector_from(np.zeros((4, 2)))
    assert P.rank == 0
    M = np.ones((4, 3))
    np.testing.assert_array_equal(linalg.apply_proj(P, M), 0.0)
    np.testing.assert_array_equal(linalg.residualize(P, M), M)


def test_projector_rejects_bad_tol():
    with pytest.raises(InvalidInputError):
        linalg.projector_from(np.ones((3, 1)), tol=0.0)


def test_residualize_own_span_is_zero():
    A = np.random.default_rng(4).standard_normal((7, 3))
    P = linalg.projector_from(A)
    assert np.max(np.abs(linalg.residualize(P, A))) < 1e-12


def test_projection_decomposition_seed11():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((9, 3))
    M = rng.standard_normal((9, 4))
    P = linalg.projector_from(A)
    R = linalg.residualize(P, M)
    assert np.max(np.abs(linalg.apply_proj(P, M) + R - M)) < 1e-12
    assert np.max(np.abs(P.basis.T @ R)) < 1e-10


def test_apply_proj_vector_and_row_mismatch():
    P = linalg.projector_from(np.ones((3, 1)))
    np.testing.assert_allclose(linalg.apply_proj(P, np.array([1.0, 2.0, 3.0])), [2.0, 2.0, 2.0])
    with pytest.raises(InvalidInputError):
        linalg.apply_proj(P, np.ones((4, 1)))
    with pytest.raises(InvalidInputError):
        linalg.residualize(P, np.ones(2))


def test_pseudo_solve_invertible():
    M = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, -1.0])
    np.testing.assert_allclose(linalg.pseudo_solve(M, b), np.linalg.solve(M, b), atol=1e-14)


def test_pseudo_solve_rank_one_minimum_norm():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    b = np.array([1.0, 2.0])
    x = linalg.pseudo_solve(M, b)
    # normal equations and row-space membership pin down the min-norm solution
    np.testing.assert_allclose(M.T @ M @ x, M.T @ b, atol=1e-12)
    np.testing.assert_allclose(x, np.array([1.0, 2.0]) / 5.0, atol=1e-14)


def test_pseudo_solve_orthogonal_rhs():
    M = np.array([[1.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(linalg.pseudo_solve(M, np.array([0.0, 1.0])), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_pseudo_solve_is_minimum_norm(seed, rank):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((6, rank)) @ rng.standard_normal((rank, 4))
    b = rng.standard_normal(6)
    x = linalg.pseudo_solve(M, b)
    N = linalg.null_space(M)
    assert N.shape[1] == 4 - rank
    np.testing.assert_allclose(M.T @ (M @ x - b), 0.0, atol=1e-9)
    z = N @ rng.standard_normal(N.shape[1])
    assert np.linalg.norm(x + z) >= np.linalg.norm(x)
    assert np.max(np.abs(N.T @ x)) < 1e-10


def test_pseudo_solve_shape_check():
    with pytest.raises(InvalidInputError):
        linalg.pseudo_solve(np.eye(2), np.ones(3))


def test_numerical_rank_and_default_tol():
    assert linalg.default_rank_tol((5, 30)) == pytest.approx(3e-9)
    M = np.outer(np.arange(1.0, 5.0), [1.0, -1.0, 2.0])
    assert linalg.numerical_rank(M) == 1
    assert linalg.numerical_rank(np.zeros((3, 3))) == 0
