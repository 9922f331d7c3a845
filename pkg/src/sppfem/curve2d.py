"""Discrete geometry of closed polygonal curves.

A curve with ``N`` vertices has ``N`` edges; edge ``j`` runs from vertex
``j`` to vertex ``j + 1`` (indices wrap). Curves are stored anticlockwise,
so the outward normal of an edge is its unit tangent ``t`` rotated by
-90 degrees, ``n = (t_y, -t_x)``.

Nodal fields (one value per vertex, piecewise linear along the curve) are
plain arrays of shape ``(N,)`` or ``(N, d)``. Per-edge constants are
wrapped in :class:`EdgeField` so the two kinds cannot be confused, and
arbitrary one-sided edge traces in :class:`OneSided`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMeshError

#: Edges shorter than ``DEGENERATE_RTOL * perimeter`` are rejected.
DEGENERATE_RTOL = 1e-14


@dataclass(frozen=True)
class EdgeField:
    """One constant scalar or vector per edge."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class OneSided:
    """Explicit one-sided traces on every edge.

    ``start[j]`` is the limit at the first vertex of edge ``j`` taken from
    inside the edge, ``end[j]`` the limit at its second vertex.
    """

    start: np.ndarray
    end: np.ndarray


def rot(v: np.ndarray) -> np.ndarray:
    """Rotate 2-vectors by -90 degrees: ``(a, b) -> (b, -a)``."""
    v = np.asarray(v)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


class PolygonalCurve:
    """Closed, anticlockwise, non-degenerate polygon in the plane.

    Parameters
    ----------
    vertices : array_like, shape (N, 2)
        Vertex coordinates in traversal order, without repeating the
        first vertex at the end.
    orient : bool
        If true, a clockwise input is reversed (keeping vertex 0 first)
        instead of being rejected.
    """

    __slots__ = ("_vertices",)

    def __init__(self, vertices, *, orient: bool = False):
        X = np.array(vertices, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"vertices must have shape (N, 2), got {X.shape}")
        if X.shape[0] < 3:
            raise ValueError(f"a closed curve needs N >= 3 vertices, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite vertex coordinate")
        check_edges(X)
        if _shoelace(X) <= 0.0:
            if not orient:
                raise ValueError("curve is not anticlockwise (signed area <= 0)")
            X = np.concatenate([X[:1], X[:0:-1]])
        X.setflags(write=False)
        self._vertices = X

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def N(self) -> int:
        return self._vertices.shape[0]

    def __len__(self):
        return self.N

    def __repr__(self):
        return f"PolygonalCurve(N={self.N}, area={enclosed_area(self):.6g})"

    def transformed(self, rotation=None, shift=(0.0, 0.0), scale=1.0) -> "PolygonalCurve":
        """Return ``scale * R @ x + shift`` applied to every vertex."""
        X = self._vertices * scale
        if rotation is not None:
            X = X @ np.asarray(rotation, dtype=float).T
        return PolygonalCurve(X + np.asarray(shift, dtype=float))


def _coords(curve) -> np.ndarray:
    if isinstance(curve, PolygonalCurve):
        return curve.vertices
    return np.asarray(curve, dtype=float)


def _shoelace(X: np.ndarray) -> float:
    Xn = np.roll(X, -1, axis=0)
    # same value as 1/2 sum (x_j - x_{j-1})(y_j + y_{j-1}) up to sign
    return 0.5 * float(np.sum(X[:, 0] * Xn[:, 1] - Xn[:, 0] * X[:, 1]))


def check_edges(X: np.ndarray) -> np.ndarray:
    """Return edge lengths of the vertex array, raising on a degenerate edge."""
    lengths = np.linalg.norm(np.roll(X, -1, axis=0) - X, axis=1)
    total = lengths.sum()
    j = int(np.argmin(lengths))
    if not lengths[j] > DEGENERATE_RTOL * total:
        raise DegenerateMeshError(f"degenerate edge {j}: length {lengths[j]:.3e}", index=j)
    return lengths


def edge_vectors(curve) -> np.ndarray:
    """Edge vectors ``h_j = X_{j+1} - X_j`` as an ``(N, 2)`` array."""
    X = _coords(curve)
    return np.roll(X, -1, axis=0) - X


def edge_lengths(curve) -> np.ndarray:
    return np.linalg.norm(edge_vectors(curve), axis=1)


def enclosed_area(curve) -> float:
    """Signed shoelace area; positive for anticlockwise curves."""
    return _shoelace(_coords(curve))


def perimeter(curve) -> float:
    return float(edge_lengths(curve).sum())


def mesh_ratio(curve) -> float:
    """Longest over shortest edge length (the mesh ratio indicator)."""
    lengths = edge_lengths(curve)
    return float(lengths.max() / lengths.min())


def outward_normals(curve) -> EdgeField:
    """Unit outward normal of every edge."""
    h = edge_vectors(curve)
    return EdgeField(rot(h) / np.linalg.norm(h, axis=1)[:, None])


def _traces(values, N: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(values, OneSided):
        start, end = np.asarray(values.start, float), np.asarray(values.end, float)
    elif isinstance(values, EdgeField):
        start = end = values.values
    else:
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full(N, float(arr))
        start, end = arr, np.roll(arr, -1, axis=0)
    if start.shape[0] != N or end.shape[0] != N:
        raise ValueError(f"field length {start.shape[0]} does not match N={N}")
    return start, end


def _dot(u, v):
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if u.ndim == 1:
        return u * v
    return np.sum(u * v, axis=1)


def lumped_inner_product(curve, u, v) -> float:
    """Mass-lumped (trapezoidal) inner product over the curve.

    ``u`` and ``v`` may be nodal arrays, :class:`EdgeField` instances,
    :class:`OneSided` traces or scalars.
    """
    lengths = edge_lengths(curve)
    N = lengths.size
    us, ue = _traces(u, N)
    vs, ve = _traces(v, N)
    return 0.5 * float(np.sum(lengths * (_dot(us, vs) + _dot(ue, ve))))


def edge_inner_product(curve, u: EdgeField, v: EdgeField) -> float:
    """Exact inner product of two per-edge constant fields."""
    lengths = edge_lengths(curve)
    return float(np.sum(lengths * _dot(np.asarray(u.values), np.asarray(v.values))))


def arc_derivative(curve, f) -> EdgeField:
    """Derivative of a nodal field with respect to arc length, per edge."""
    lengths = edge_lengths(curve)
    f = np.asarray(f, dtype=float)
    if f.shape[0] != lengths.size:
        raise ValueError(f"field length {f.shape[0]} does not match N={lengths.size}")
    df = np.roll(f, -1, axis=0) - f
    if df.ndim == 1:
        return EdgeField(df / lengths)
    return EdgeField(df / lengths[:, None])
