"""Sparse linear systems for the Newton and Picard steps.

Matrices are assembled from (row, col, value) triplets with duplicate
entries summed, which is the usual finite element assembly rule. Two
solvers are offered: a sparse LU factorization (SuperLU) and GMRES
preconditioned by an incomplete LU factorization. The Jacobians produced
by the flow modules are nonsymmetric, so nothing here assumes symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import KrylovError, SingularSystemError

#: Above this many unknowns ``solve`` switches from LU to GMRES+ILU.
DIRECT_SOLVE_LIMIT = 20000


@dataclass(frozen=True)
class SparseSystem:
    """Square sparse matrix in CSR form with a dense right-hand side."""

    matrix: sp.csr_matrix
    rhs: np.ndarray

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {n}x{m}")
        if self.rhs.shape != (n,):
            raise ValueError(f"rhs has shape {self.rhs.shape}, expected ({n},)")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def from_arrays(rows, cols, values, n: int) -> sp.csr_matrix:
    """Vectorized form of :func:`build` taking parallel index/value arrays."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if not (rows.size == cols.size == values.size):
        raise ValueError("rows, cols and values must have equal length")
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise IndexError(f"triplet index out of range for n={n}")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite matrix entry")
    mat = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    empty = np.flatnonzero(np.diff(mat.indptr) == 0)
    if empty.size:
        raise ValueError(f"structurally empty row(s) {empty[:5].tolist()} in n={n} matrix")
    return mat


class AssemblyPattern:
    """Precomputed CSR structure for repeated assembly on fixed index arrays.

    Finite element matrices on a fixed mesh share one sparsity pattern, so
    the sort that merges duplicate triplets is done once; afterwards
    :meth:`matrix` only accumulates values into their slots.
    """

    def __init__(self, rows, cols, n: int):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.size != cols.size:
            raise ValueError("rows and cols must have equal length")
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise IndexError(f"triplet index out of range for n={n}")
        keys, slot = np.unique(rows * n + cols, return_inverse=True)
        self.n = n
        self.size = rows.size
        self.slot = slot.ravel()
        self.indices = (keys % n).astype(np.int32)
        counts = np.bincount(keys // n, minlength=n)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0)
            raise ValueError(f"structurally empty row(s) {empty[:5].tolist()} in n={n} matrix")
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def matrix(self, values) -> sp.csr_matrix:
        values = np.asarray(values, dtype=float).ravel()
        if values.size != self.size:
            raise ValueError(f"expected {self.size} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite matrix entry")
        data = np.bincount(self.slot, weights=values, minlength=self.indices.size)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def build(triplets: Iterable[tuple[int, int, float]], n: int) -> sp.csr_matrix:
    """Assemble a CSR matrix from ``(row, col, value)`` triplets.

    Duplicate positions are summed. Raises ``IndexError`` for an index
    outside ``[0, n)``, ``ValueError`` for a non-finite value or for a row
    without any stored entry.
    """
    triplets = list(triplets)
    if not triplets:
        return from_arrays([], [], [], n)
    rows, cols, values = zip(*triplets)
    return from_arrays(rows, cols, values, n)


def _residual_ok(A, x, b, rtol=1e-10) -> bool:
    r = A @ x - b
    if not np.all(np.isfinite(r)):
        return False
    a_norm = spla.norm(A, np.inf)
    bound = rtol * (a_norm * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0))
    return np.abs(r).max(initial=0.0) <= bound


def _factor(A, permc_spec, thresh):
    try:
        return spla.splu(A, permc_spec=permc_spec, diag_pivot_thresh=thresh)
    except RuntimeError:
        return None


def solve_direct(system: SparseSystem) -> np.ndarray:
    """Solve by sparse LU.

    The first attempt uses a minimum-degree ordering of ``A + A^T`` with a
    weak preference for diagonal pivots, which keeps the fill low for the
    nearly structurally symmetric flow systems. If it fails, or the result
    violates the backward-error bound
    ``|Ax - b|_inf <= 1e-10 (|A|_inf |x|_inf + |b|_inf)``, the system is
    refactored with column approximate minimum degree ordering and full
    partial pivoting. A second failure raises :class:`SingularSystemError`.
    """
    A = sp.csc_matrix(system.matrix)
    lu = None
    for permc_spec, thresh in (("MMD_AT_PLUS_A", 0.01), ("COLAMD", 1.0)):
        lu = _factor(A, permc_spec, thresh)
        if lu is None:
            continue
        x = lu.solve(system.rhs)
        if _residual_ok(system.matrix, x, system.rhs):
            return x
    if lu is None:
        raise SingularSystemError("sparse LU failed: matrix is exactly singular")
    diag = np.abs(lu.U.diagonal())
    k = int(np.argmin(diag))
    raise SingularSystemError(
        f"LU solve residual too large; smallest |U_kk| = {diag[k]:.3e} at pivot {k}"
    )


def solve_krylov(
    system: SparseSystem,
    *,
    tol: float = 1e-12,
    max_it: int = 500,
    restart: int = 50,
    drop_tol: float = 1e-5,
    fill_factor: float = 20.0,
    return_info: bool = False,
):
    """GMRES with an incomplete-LU right preconditioner.

    ``tol`` is the relative residual target ``|b - Ax| <= tol |b|``.
    With ``return_info=True`` a ``(x, iterations)`` pair is returned.
    """
    A = sp.csc_matrix(system.matrix)
    b = system.rhs
    n = system.n
    if not np.any(b):
        x = np.zeros(n)
        return (x, 0) if return_info else x
    try:
        ilu = spla.spilu(A, drop_tol=drop_tol, fill_factor=fill_factor)
    except RuntimeError as exc:
        raise SingularSystemError(f"incomplete LU failed: {exc}") from exc
    M = spla.LinearOperator((n, n), matvec=ilu.solve, dtype=float)
    count = [0]

    def _cb(_):
        count[0] += 1

    x, info = spla.gmres(
        A, b, rtol=tol, atol=0.0, restart=restart, maxiter=max_it, M=M,
        callback=_cb, callback_type="pr_norm",
    )
    if info < 0:
        raise KrylovError(f"GMRES breakdown (info={info})")
    rel = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    if info > 0 or not np.isfinite(rel) or rel > 10 * tol:
        raise KrylovError(f"GMRES did not converge: relative residual {rel:.3e} after {count[0]} iterations")
    return (x, count[0]) if return_info else x


def solve(system: SparseSystem, method: str = "auto") -> np.ndarray:
    """Dispatch to the direct or Krylov solver (``auto`` switches on size)."""
    if method == "auto":
        method = "direct" if system.n <= DIRECT_SOLVE_LIMIT else "iterative"
    if method == "direct":
        return solve_direct(system)
    if method == "iterative":
        return solve_krylov(system)
    raise ValueError(f"unknown linear solver {method!r}")
