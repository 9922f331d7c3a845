"""Discrete geometry of closed, consistently oriented triangulated surfaces.

Triangles list their vertices anticlockwise as seen from outside, so the
orientation vector ``(q2 - q1) x (q3 - q1)`` of each triangle points
outward and has length twice the triangle area.

Nodal fields are arrays of shape ``(K,)`` or ``(K, d)``; per-triangle
constants are wrapped in :class:`TriField` and explicit one-sided corner
values in :class:`CornerField`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateMeshError

#: Triangles with ``|J| < DEGENERATE_RTOL * mean |J|`` are rejected.
DEGENERATE_RTOL = 1e-14


@dataclass(frozen=True)
class TriField:
    """One constant scalar or vector per triangle."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CornerField:
    """Values at the three corners of every triangle, shape ``(J, 3, ...)``."""

    values: np.ndarray


def orientation_vectors_of(X: np.ndarray, tris: np.ndarray) -> np.ndarray:
    q1, q2, q3 = X[tris[:, 0]], X[tris[:, 1]], X[tris[:, 2]]
    return np.cross(q2 - q1, q3 - q1)


def check_triangles(X: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Return ``|J|`` per triangle, raising on a degenerate one."""
    jn = np.linalg.norm(orientation_vectors_of(X, tris), axis=1)
    j = int(np.argmin(jn))
    if not jn[j] > DEGENERATE_RTOL * jn.mean():
        raise DegenerateMeshError(f"degenerate triangle {j}: |J| = {jn[j]:.3e}", index=j)
    return jn


class TriSurface:
    """Closed orientable genus-0 triangle mesh with outward orientation.

    Construction checks that every directed edge has exactly one reversed
    partner, that no triangle is degenerate and that ``K - E + J == 2``.
    If the enclosed volume comes out negative the triangles are flipped
    (with a warning) so that normals point outward.

    Parameters
    ----------
    vertices : array_like, shape (K, 3)
    triangles : array_like of int, shape (J, 3)
    """

    def __init__(self, vertices, triangles, *, check_euler: bool = True):
        X = np.array(vertices, dtype=float)
        T = np.array(triangles, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != 3:
            raise ValueError(f"vertices must have shape (K, 3), got {X.shape}")
        if T.ndim != 2 or T.shape[1] != 3:
            raise ValueError(f"triangles must have shape (J, 3), got {T.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite vertex coordinate")
        K = X.shape[0]
        if T.min() < 0 or T.max() >= K:
            raise ValueError("triangle index out of range")
        self._twin = _edge_twins(T, K)
        if check_euler:
            E = T.shape[0] * 3 // 2
            chi = K - E + T.shape[0]
            if chi != 2:
                raise ValueError(f"Euler characteristic {chi} != 2 (K={K}, J={T.shape[0]})")
        check_triangles(X, T)
        if _volume(X, T) < 0:
            warnings.warn("surface was inward oriented; triangles flipped", stacklevel=2)
            T = T[:, [0, 2, 1]]
            self._twin = _edge_twins(T, K)
        X.setflags(write=False)
        T.setflags(write=False)
        self._vertices = X
        self._triangles = T
        self._incidence = None

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    @property
    def K(self) -> int:
        return self._vertices.shape[0]

    @property
    def J(self) -> int:
        return self._triangles.shape[0]

    @property
    def twin(self) -> np.ndarray:
        """``twin[j, e]`` is the half-edge ``3 j' + e'`` opposite to edge ``e`` of triangle ``j``.

        Edge ``e`` of a triangle runs from corner ``e`` to corner ``e + 1``.
        """
        return self._twin

    def vertex_triangles(self, k: int) -> np.ndarray:
        """Indices of the triangles incident to vertex ``k``."""
        if self._incidence is None:
            J = self.J
            rows = self._triangles.ravel()
            cols = np.repeat(np.arange(J), 3)
            self._incidence = sp.csr_matrix((np.ones(3 * J), (rows, cols)), shape=(self.K, J))
        inc = self._incidence
        return inc.indices[inc.indptr[k]:inc.indptr[k + 1]]

    def with_vertices(self, X) -> "TriSurface":
        """Same connectivity, new vertex positions."""
        return TriSurface(X, self._triangles)

    def transformed(self, rotation=None, shift=(0.0, 0.0, 0.0), scale=1.0) -> "TriSurface":
        X = self._vertices * scale
        if rotation is not None:
            X = X @ np.asarray(rotation, dtype=float).T
        return TriSurface(X + np.asarray(shift, dtype=float), self._triangles)

    def __repr__(self):
        return f"TriSurface(K={self.K}, J={self.J})"


def _edge_twins(T: np.ndarray, K: int) -> np.ndarray:
    J = T.shape[0]
    start = T.ravel()
    end = T[:, [1, 2, 0]].ravel()
    key = start * K + end
    order = np.argsort(key)
    sorted_key = key[order]
    if np.any(sorted_key[1:] == sorted_key[:-1]):
        raise ValueError("a directed edge appears twice: orientation is inconsistent or mesh is non-manifold")
    rkey = end * K + start
    pos = np.searchsorted(sorted_key, rkey)
    pos = np.minimum(pos, sorted_key.size - 1)
    if not np.all(sorted_key[pos] == rkey):
        raise ValueError("surface is not closed: some edge has no oppositely oriented partner")
    return order[pos].reshape(J, 3)


def _volume(X, T) -> float:
    Jv = orientation_vectors_of(X, T)
    return float(np.sum((X[T[:, 0]] + X[T[:, 1]] + X[T[:, 2]]) * Jv)) / 18.0


def _XT(surface, X=None):
    return (surface.vertices if X is None else np.asarray(X, dtype=float)), surface.triangles


def orientation_vector(surface: TriSurface, j: int) -> np.ndarray:
    X, T = surface.vertices, surface.triangles
    q1, q2, q3 = X[T[j]]
    return np.cross(q2 - q1, q3 - q1)


def orientation_vectors(surface: TriSurface) -> np.ndarray:
    return orientation_vectors_of(surface.vertices, surface.triangles)


def outward_normals(surface: TriSurface) -> TriField:
    Jv = orientation_vectors(surface)
    jn = check_triangles(surface.vertices, surface.triangles)
    return TriField(Jv / jn[:, None])


def triangle_areas(surface: TriSurface) -> np.ndarray:
    return 0.5 * np.linalg.norm(orientation_vectors(surface), axis=1)


def surface_area(surface: TriSurface) -> float:
    return float(triangle_areas(surface).sum())


def enclosed_volume(surface: TriSurface) -> float:
    """``(1/18) sum_j sum_k q_{j_k} . J_j``."""
    return _volume(surface.vertices, surface.triangles)


def _corner_values(surface: TriSurface, f) -> np.ndarray:
    J = surface.J
    if isinstance(f, CornerField):
        vals = np.asarray(f.values, dtype=float)
        if vals.shape[:2] != (J, 3):
            raise ValueError(f"corner field has shape {vals.shape}, expected ({J}, 3, ...)")
        return vals
    if isinstance(f, TriField):
        vals = np.asarray(f.values)
        if vals.shape[0] != J:
            raise ValueError(f"triangle field length {vals.shape[0]} does not match J={J}")
        return np.repeat(vals[:, None], 3, axis=1)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full((J, 3), float(arr))
    if arr.shape[0] != surface.K:
        raise ValueError(f"nodal field length {arr.shape[0]} does not match K={surface.K}")
    return arr[surface.triangles]


def lumped_inner_product_3d(surface: TriSurface, f, g) -> float:
    """Vertex-quadrature inner product ``(1/3) sum_j |sigma_j| sum_k f_k . g_k``."""
    fv = _corner_values(surface, f)
    gv = _corner_values(surface, g)
    if fv.shape != gv.shape:
        raise ValueError(f"shape mismatch: {fv.shape[2:]} vs {gv.shape[2:]}")
    prod = fv * gv
    if prod.ndim == 3:
        prod = prod.sum(axis=2)
    return float(np.sum(triangle_areas(surface)[:, None] * prod)) / 3.0


def _gradient_vectors(X, T):
    """Per-triangle gradients of the three corner hat functions, shape (J, 3, 3)."""
    q = X[T]
    Jv = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
    jn = np.linalg.norm(Jv, axis=1)
    n = Jv / jn[:, None]
    opp = np.stack([q[:, 2] - q[:, 1], q[:, 0] - q[:, 2], q[:, 1] - q[:, 0]], axis=1)
    # n x (opposite edge) / |J| points from the edge towards the corner
    return np.cross(n[:, None, :], opp) / jn[:, None, None], jn


def surface_gradient(surface: TriSurface, f) -> TriField:
    """Piecewise-constant surface gradient of a nodal field.

    A scalar field gives ``(J, 3)`` values; a ``(K, d)`` field gives
    ``(J, d, 3)`` (one gradient row per component).
    """
    X, T = surface.vertices, surface.triangles
    check_triangles(X, T)
    G, _ = _gradient_vectors(X, T)
    fv = np.asarray(f, dtype=float)
    if fv.shape[0] != surface.K:
        raise ValueError(f"nodal field length {fv.shape[0]} does not match K={surface.K}")
    fc = fv[T]  # (J, 3) or (J, 3, d)
    if fc.ndim == 2:
        return TriField(np.einsum("jk,jkc->jc", fc, G))
    return TriField(np.einsum("jkd,jkc->jdc", fc, G))


def stiffness_local(X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Element matrices ``|sigma| grad(phi_k) . grad(phi_l)``, shape (J, 3, 3)."""
    q = X[T]
    opp = np.stack([q[:, 2] - q[:, 1], q[:, 0] - q[:, 2], q[:, 1] - q[:, 0]], axis=1)
    jn = np.linalg.norm(np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]), axis=1)
    return np.einsum("jkc,jlc->jkl", opp, opp) / (2.0 * jn[:, None, None])


def stiffness_matrix(surface: TriSurface) -> sp.csr_matrix:
    """Assembled ``(grad phi_k, grad phi_l)`` over the surface, K x K."""
    T = surface.triangles
    loc = stiffness_local(surface.vertices, T)
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(surface.K, surface.K))
