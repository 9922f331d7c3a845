"""Distances between discrete shapes and convergence diagnostics.

The 2D distance is the area of the symmetric difference of the enclosed
regions, ``2|A u B| - |A| - |B|``. The union area comes from Green's
theorem applied to the boundary of the union: every edge of one polygon
is split where it meets the other polygon, and the pieces lying outside
the other region (plus shared pieces traversed in the same direction,
counted once) contribute their shoelace terms.

The 3D distance is the symmetrized max-min vertex-to-triangle distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curve2d import PolygonalCurve
from .surface3d import TriSurface

_ON_BOUNDARY_RTOL = 1e-10


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _poly(c) -> np.ndarray:
    X = c.vertices if isinstance(c, PolygonalCurve) else np.asarray(c, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2 or X.shape[0] < 3:
        raise ValueError("polygon must be an (N >= 3, 2) array")
    return X


def _signed_area(X):
    Y = np.roll(X, -1, axis=0)
    return 0.5 * float(np.sum(_cross(X, Y)))


def is_simple(X: np.ndarray) -> bool:
    """True if no two non-adjacent edges of the closed polygon touch."""
    n = X.shape[0]
    p = X
    r = np.roll(X, -1, axis=0) - X
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    d = p[j] - p[i]
    den = _cross(r[i], r[j])
    scale = np.abs(r).max()
    par = np.abs(den) <= 1e-14 * scale * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(d, r[j]) / den
        u = _cross(d, r[i]) / den
    hit = ~par & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    if np.any(hit):
        return False
    # collinear overlaps
    col = par & (np.abs(_cross(d, r[i])) <= 1e-14 * scale * scale)
    if np.any(col):
        ii, jj = i[col], j[col]
        rr = np.sum(r[ii] * r[ii], axis=1)
        t0 = np.sum((p[jj] - p[ii]) * r[ii], axis=1) / rr
        t1 = np.sum((p[jj] + r[jj] - p[ii]) * r[ii], axis=1) / rr
        lo, hi = np.minimum(t0, t1), np.maximum(t0, t1)
        if np.any((hi >= 0) & (lo <= 1)):
            return False
    return True


def _split_params(P, Q) -> list[np.ndarray]:
    """Parameters in [0, 1] where each edge of P meets the boundary of Q."""
    p = P[:, None, :]
    r = (np.roll(P, -1, axis=0) - P)[:, None, :]
    q = Q[None, :, :]
    s = (np.roll(Q, -1, axis=0) - Q)[None, :, :]
    d = q - p
    den = _cross(r, s)
    rs = np.linalg.norm(r, axis=2) * np.linalg.norm(s, axis=2)
    par = np.abs(den) <= 1e-13 * rs
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(d, s) / den
        u = _cross(d, r) / den
    hit = ~par & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    rr = np.sum(r * r, axis=2)
    col = par & (np.abs(_cross(d, r)) <= 1e-13 * rr)
    t0 = np.sum(d * r, axis=2) / rr
    t1 = np.sum((d + s) * r, axis=2) / rr
    out = []
    for e in range(P.shape[0]):
        ts = [0.0, 1.0]
        ts.extend(t[e, hit[e]].tolist())
        if np.any(col[e]):
            for v in np.concatenate([t0[e, col[e]], t1[e, col[e]]]):
                if 0.0 < v < 1.0:
                    ts.append(float(v))
        out.append(np.unique(np.clip(ts, 0.0, 1.0)))
    return out


def _point_segment_dist(pts, A, B):
    """Distances (n, m) from points to segments A[j]B[j], and the segment direction."""
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    w = pts[:, None, :] - A[None]
    t = np.clip(np.sum(w * AB[None], axis=2) / L2[None], 0.0, 1.0)
    diff = w - t[..., None] * AB[None]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _inside(pts, Q):
    """Even-odd point in polygon test for points of shape (n, 2)."""
    x, y = pts[:, 0:1], pts[:, 1:2]
    qa = Q[None, :, :]
    qb = np.roll(Q, -1, axis=0)[None, :, :]
    ya, yb = qa[..., 1], qb[..., 1]
    cond = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = qa[..., 0] + (y - ya) * (qb[..., 0] - qa[..., 0]) / (yb - ya)
    crossings = np.sum(cond & (x < xint), axis=1)
    return (crossings % 2) == 1


def _union_boundary_terms(P, Q, keep_shared: bool) -> float:
    """Shoelace sum over the pieces of P's boundary that bound the union."""
    params = _split_params(P, Q)
    starts, ends = [], []
    nxt = np.roll(P, -1, axis=0)
    for e, ts in enumerate(params):
        a, b = P[e], nxt[e]
        pts = a + ts[:, None] * (b - a)
        starts.append(pts[:-1])
        ends.append(pts[1:])
    S = np.concatenate(starts)
    E = np.concatenate(ends)
    seg = E - S
    nonzero = np.sum(seg * seg, axis=1) > 0
    S, E, seg = S[nonzero], E[nonzero], seg[nonzero]
    mid = 0.5 * (S + E)
    scale = max(np.ptp(P, axis=0).max(), np.ptp(Q, axis=0).max())
    Qn = np.roll(Q, -1, axis=0)
    dist = _point_segment_dist(mid, Q, Qn)
    nearest = np.argmin(dist, axis=1)
    on = dist[np.arange(mid.shape[0]), nearest] <= _ON_BOUNDARY_RTOL * scale
    keep = ~on & ~_inside(mid, Q)
    if keep_shared and np.any(on):
        qdir = (Qn - Q)[nearest[on]]
        keep[on] = np.sum(seg[on] * qdir, axis=1) > 0
    return 0.5 * float(np.sum(_cross(S[keep], E[keep])))


def union_area(c1, c2) -> float:
    """Area of the union of the regions enclosed by two simple polygons."""
    P, Q = _poly(c1), _poly(c2)
    return _union_boundary_terms(P, Q, True) + _union_boundary_terms(Q, P, False)


def manifold_distance_2d(c1, c2, *, check_simple: bool = True) -> float:
    """Area of the symmetric difference of the regions enclosed by two curves.

    Both inputs must be simple, anticlockwise polygons.
    """
    P, Q = _poly(c1), _poly(c2)
    if check_simple:
        for name, X in (("first", P), ("second", Q)):
            if not is_simple(X):
                raise ValueError(f"{name} curve is self-intersecting")
    a1, a2 = _signed_area(P), _signed_area(Q)
    if a1 <= 0 or a2 <= 0:
        raise ValueError("curves must be anticlockwise")
    return max(2.0 * union_area(P, Q) - a1 - a2, 0.0)


def _points_triangles_distance(pts, A, B, C):
    """Distances of shape (n, m) between points and triangles ABC."""
    AB, AC = B - A, C - A
    nrm = np.cross(AB, AC)
    nn = np.sum(nrm * nrm, axis=1)
    w = pts[:, None, :] - A[None]
    height = np.sum(w * nrm[None], axis=2) / np.sqrt(nn)[None]
    # barycentric coordinates of the projection onto the triangle plane
    u = np.sum(np.cross(w, AC[None]) * nrm[None], axis=2) / nn[None]
    v = np.sum(np.cross(AB[None], w) * nrm[None], axis=2) / nn[None]
    inside = (u >= 0) & (v >= 0) & (u + v <= 1)
    d = np.where(inside, np.abs(height), np.inf)
    outside = ~inside
    if np.any(outside):
        d_edges = np.minimum(
            np.minimum(_seg_dist3(pts, A, B), _seg_dist3(pts, B, C)),
            _seg_dist3(pts, C, A),
        )
        d = np.where(outside, d_edges, d)
    return d


def _seg_dist3(pts, A, B):
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    w = pts[:, None, :] - A[None]
    t = np.clip(np.sum(w * AB[None], axis=2) / L2[None], 0.0, 1.0)
    diff = w - t[..., None] * AB[None]
    return np.sqrt(np.sum(diff * diff, axis=2))


def point_triangle_distance(p, tri) -> float:
    """Euclidean distance from point ``p`` to the closed triangle ``tri`` (3 x 3)."""
    p = np.asarray(p, dtype=float).reshape(1, 3)
    tri = np.asarray(tri, dtype=float)
    A, B, C = tri[0:1], tri[1:2], tri[2:3]
    area2 = np.linalg.norm(np.cross(B - A, C - A))
    scale = max(np.linalg.norm(B - A), np.linalg.norm(C - A), np.linalg.norm(C - B))
    if not area2 > 1e-14 * scale * scale:
        raise ValueError("degenerate triangle")
    return float(_points_triangles_distance(p, A, B, C)[0, 0])


def _max_min_distance(points, surface: TriSurface, chunk: int = 128) -> float:
    X, T = surface.vertices, surface.triangles
    A, B, C = X[T[:, 0]], X[T[:, 1]], X[T[:, 2]]
    worst = 0.0
    for i in range(0, points.shape[0], chunk):
        d = _points_triangles_distance(points[i:i + chunk], A, B, C)
        worst = max(worst, float(d.min(axis=1).max()))
    return worst


def manifold_distance_3d(s1: TriSurface, s2: TriSurface) -> float:
    """Mean of the two one-sided max-min vertex-to-triangle distances."""
    return 0.5 * (_max_min_distance(s2.vertices, s1) + _max_min_distance(s1.vertices, s2))


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    tau: float
    error: float
    order: float | None = None


def convergence_table(errors: Sequence[float], hs: Sequence[float], taus: Sequence[float]) -> list[ConvergenceRow]:
    """Rows with ``order = log2(e_{k-1} / e_k)`` (none on the coarsest row)."""
    if len(errors) < 2 or not (len(errors) == len(hs) == len(taus)):
        raise ValueError("need at least two levels with matching h and tau")
    for e in errors:
        if not e > 0:
            raise ValueError(f"errors must be positive, got {e}")
    rows = [ConvergenceRow(hs[0], taus[0], errors[0])]
    for k in range(1, len(errors)):
        rows.append(ConvergenceRow(hs[k], taus[k], errors[k], math.log2(errors[k - 1] / errors[k])))
    return rows


def equilibrium_perimeter(A0: float, N: int) -> float:
    """Perimeter of the regular N-gon of area ``A0``."""
    return 2.0 * math.sqrt(A0 * N * math.tan(math.pi / N))


def equilibrium_perimeter_errors(L_final: float, A0: float, N: int) -> tuple[float, float]:
    """``(L - 2 sqrt(A0 pi), that minus sqrt(A0 pi) pi^2 h^2 / 3)`` with ``h = 1/N``."""
    if not A0 > 0 or N < 3:
        raise ValueError("need A0 > 0 and N >= 3")
    h = 1.0 / N
    r = math.sqrt(A0 * math.pi)
    d1 = L_final - 2.0 * r
    return d1, d1 - r * math.pi ** 2 / 3.0 * h * h
