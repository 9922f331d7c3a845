import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from sppfem.errors import KrylovError, SingularSystemError
from sppfem.sparse_linalg import (
    DIRECT_SOLVE_LIMIT,
    AssemblyPattern,
    SparseSystem,
    build,
    from_arrays,
    solve,
    solve_direct,
    solve_krylov,
)


def gauss(A, b):
    """Dense Gaussian elimination with partial pivoting."""
    A = A.astype(float).copy()
    b = b.astype(float).copy()
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]] = A[[p, k]]
        b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


def random_dd(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    return A, rng.standard_normal(n)


def test_build_sums_duplicates():
    m = build([(0, 0, 1.0), (0, 0, 2.0)], 1)
    assert m.toarray().tolist() == [[3.0]]


def test_build_errors():
    with pytest.raises(ValueError):
        build([], 1)
    with pytest.raises(IndexError):
        build([(0, 2, 1.0)], 2)
    with pytest.raises(ValueError):
        build([(0, 0, np.inf)], 1)
    with pytest.raises(ValueError):
        build([(0, 0, 1.0)], 2)  # row 1 empty


def test_system_validation():
    with pytest.raises(ValueError):
        SparseSystem(sp.csr_matrix(np.eye(2)), np.ones(3))
    s = SparseSystem(build([(0, 0, 1.0), (1, 1, 2.0)], 2), np.ones(2))
    assert (s.n, s.nnz) == (2, 2)


def test_identity():
    b = np.arange(1.0, 6.0)
    s = SparseSystem(sp.identity(5, format="csr"), b)
    np.testing.assert_array_equal(solve_direct(s), b)
    x, its = solve_krylov(s, return_info=True)
    np.testing.assert_allclose(x, b)
    assert its <= 1


@pytest.mark.parametrize("seed", range(5))
def test_direct_matches_dense_elimination(seed):
    A, b = random_dd(10, seed)
    s = SparseSystem(sp.csr_matrix(A), b)
    ref = gauss(A, b)
    np.testing.assert_allclose(solve_direct(s), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
    np.testing.assert_allclose(solve_krylov(s), ref, atol=1e-8)


def test_laplacian_quadratic():
    n = 41
    h = 1.0 / (n - 1)
    rows, cols, vals = [0, n - 1], [0, n - 1], [1.0, 1.0]
    for i in range(1, n - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [-1.0, 2.0, -1.0]
    b = np.full(n, h * h)
    b[[0, -1]] = 0.0
    x = solve_direct(SparseSystem(from_arrays(rows, cols, vals, n), b))
    t = np.linspace(0, 1, n)
    np.testing.assert_allclose(x, 0.5 * t * (1 - t), atol=1e-13)


def test_singular_reported():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularSystemError):
        solve_direct(SparseSystem(A, np.array([1.0, 0.0])))


def test_krylov_iteration_cap():
    rng = np.random.default_rng(0)
    A = sp.csr_matrix(rng.standard_normal((60, 60)))
    with pytest.raises(KrylovError):
        solve_krylov(SparseSystem(A, rng.standard_normal(60)), max_it=1, restart=2, drop_tol=0.9, fill_factor=1)


def test_solve_dispatch():
    A, b = random_dd(10, 3)
    s = SparseSystem(sp.csr_matrix(A), b)
    np.testing.assert_allclose(solve(s, "auto"), solve_direct(s))
    np.testing.assert_allclose(solve(s, "iterative"), solve_direct(s), atol=1e-8)
    assert DIRECT_SOLVE_LIMIT == 20000
    with pytest.raises(ValueError):
        solve(s, "magic")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_assembly_order_independent(seed):
    rng = np.random.default_rng(seed)
    n = 8
    rows = np.concatenate([np.arange(n), rng.integers(0, n, 40)])
    cols = np.concatenate([np.arange(n), rng.integers(0, n, 40)])
    vals = np.concatenate([np.full(n, 20.0), rng.standard_normal(40)])
    perm = rng.permutation(rows.size)
    A1 = from_arrays(rows, cols, vals, n)
    A2 = from_arrays(rows[perm], cols[perm], vals[perm], n)
    np.testing.assert_array_equal(A1.indptr, A2.indptr)
    np.testing.assert_array_equal(A1.indices, A2.indices)
    np.testing.assert_allclose(A1.data, A2.data, rtol=1e-15, atol=1e-15)
    b = rng.standard_normal(n)
    x1 = solve_direct(SparseSystem(A1, b))
    x2 = solve_direct(SparseSystem(A2, b))
    np.testing.assert_allclose(x1, x2, atol=1e-14)
    # round trip
    np.testing.assert_allclose(A1 @ x1, b, atol=1e-10 * (np.abs(b).max() + 1))
    pat = AssemblyPattern(rows, cols, n)
    A3 = pat.matrix(vals)
    assert abs(A3 - A1).max() <= 1e-14
