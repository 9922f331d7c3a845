"""Initial curves and surfaces used by the experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curve2d import PolygonalCurve
from .surface3d import TriSurface

CURVE_KINDS = ("rectangle", "ellipse", "flower", "astroid")
SURFACE_KINDS = ("cuboid", "sphere")


@dataclass(frozen=True)
class ShapeSpec:
    """Shape kind, its dimensions and resolution.

    For curves ``resolution`` is the vertex count ``N``; for surfaces it is
    the refinement level (see :func:`cuboid_surface`, :func:`sphere_surface`).
    """

    kind: str
    params: dict = field(default_factory=dict)
    resolution: int = 32

    def __post_init__(self):
        if self.kind not in CURVE_KINDS + SURFACE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        for k, v in self.params.items():
            if not float(v) > 0:
                raise ValueError(f"shape parameter {k} must be positive, got {v}")
        if self.kind in CURVE_KINDS and self.resolution < 3:
            raise ValueError("curves need N >= 3")
        if self.kind in SURFACE_KINDS and self.resolution < 0:
            raise ValueError("refinement level must be >= 0")

    @property
    def dimension(self) -> int:
        return 2 if self.kind in CURVE_KINDS else 3

    def build(self):
        p = self.params
        n = self.resolution
        if self.kind == "rectangle":
            return rectangle_curve(p.get("length", 5.6), p.get("width", 0.8), n)
        if self.kind == "ellipse":
            return ellipse_curve(p.get("a", 2.8), p.get("b", 0.4), n)
        if self.kind == "flower":
            return flower_curve(n)
        if self.kind == "astroid":
            return astroid_curve(n)
        if self.kind == "cuboid":
            return cuboid_surface(p.get("lx", 4.0), p.get("ly", 1.0), p.get("lz", 1.0), n)
        return sphere_surface(p.get("radius", 1.0), n)


def _split_counts(lengths, N: int) -> list[int]:
    """Distribute ``N`` segments over sides proportionally (largest remainder)."""
    lengths = np.asarray(lengths, dtype=float)
    ideal = N * lengths / lengths.sum()
    counts = np.maximum(np.floor(ideal + 1e-9).astype(int), 1)
    while counts.sum() > N:
        k = int(np.argmax(counts - ideal))
        counts[k] -= 1
    while counts.sum() < N:
        k = int(np.argmax(ideal - counts))
        counts[k] += 1
    return counts.tolist()


def rectangle_curve(length: float, width: float, N: int) -> PolygonalCurve:
    """Axis-aligned rectangle centred at the origin, corners included.

    The ``N`` vertices are spread uniformly along each side with per-side
    segment counts proportional to the side lengths, so for the 5.6 x 0.8
    rectangle and ``N`` a multiple of 32 the spacing is uniform overall.
    """
    if N < 4:
        raise ValueError("a rectangle needs N >= 4 vertices")
    hx, hy = 0.5 * length, 0.5 * width
    corners = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    counts = _split_counts([length, width, length, width], N)
    pts = []
    for k, n in enumerate(counts):
        p, q = corners[k], corners[(k + 1) % 4]
        s = np.arange(n)[:, None] / n
        pts.append(p + s * (q - p))
    return PolygonalCurve(np.concatenate(pts))


def _angles(N: int) -> np.ndarray:
    if N < 3:
        raise ValueError("N must be >= 3")
    return 2.0 * np.pi * np.arange(N) / N


def ellipse_curve(a: float, b: float, N: int) -> PolygonalCurve:
    th = _angles(N)
    return PolygonalCurve(np.column_stack([a * np.cos(th), b * np.sin(th)]))


def flower_curve(N: int) -> PolygonalCurve:
    """Six-petal flower ``r = 2 + cos(6 theta)`` sampled uniformly in theta."""
    th = _angles(N)
    r = 2.0 + np.cos(6 * th)
    return PolygonalCurve(np.column_stack([r * np.cos(th), r * np.sin(th)]))


def astroid_curve(N: int) -> PolygonalCurve:
    th = _angles(N)
    x = 0.75 * (3 * np.cos(th) + np.cos(3 * th))
    y = 0.75 * (3 * np.sin(th) - np.sin(3 * th))
    return PolygonalCurve(np.column_stack([x, y]))


def cuboid_surface(lx: float, ly: float, lz: float, level: int) -> TriSurface:
    """Box centred at the origin, each face gridded into square cells.

    The cell size is ``2**(1 - level)``; every cell gets a centre vertex and
    is cut into four triangles, so the mesh size ``max sqrt|sigma|`` equals
    ``2**-level`` on dimensions that are multiples of the cell size. For the
    (4, 1, 1) box, levels 2..5 give (K, J) = (146, 288), (578, 1152),
    (2306, 4608), (9218, 18432).
    """
    cell = 2.0 ** (1 - level)
    dims = np.array([lx, ly, lz], dtype=float)
    if np.any(dims <= 0):
        raise ValueError("cuboid dimensions must be positive")
    n = np.maximum(np.rint(dims / cell).astype(int), 1)
    spacing = dims / n
    origin = -0.5 * dims

    index: dict[tuple[int, int, int], int] = {}
    verts: list[np.ndarray] = []

    def lattice(i, j, k) -> int:
        key = (i, j, k)
        if key not in index:
            index[key] = len(verts)
            verts.append(origin + spacing * key)
        return index[key]

    tris = []
    # each face: fixed axis, side (0 or n), and two in-plane axes (u, v) with
    # u x v pointing outward
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n[axis]):
            outward = side > 0
            for i in range(n[u]):
                for j in range(n[v]):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        key = [0, 0, 0]
                        key[axis], key[u], key[v] = side, i + di, j + dj
                        quad.append(lattice(*key))
                    if not outward:
                        quad = quad[::-1]
                    c = np.mean([verts[q] for q in quad], axis=0)
                    center = len(verts)
                    verts.append(c)
                    for k in range(4):
                        tris.append((quad[k], quad[(k + 1) % 4], center))
    return TriSurface(np.array(verts), np.array(tris))


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1)[:, None], f


def sphere_surface(radius: float, level: int) -> TriSurface:
    """Icosahedron refined ``level`` times by edge midpoints, on a sphere."""
    v, f = _icosahedron()
    verts = list(v)
    for _ in range(level):
        mid: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in mid:
                p = verts[i] + verts[j]
                mid[key] = len(verts)
                verts.append(p / np.linalg.norm(p))
            return mid[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = np.array(nf)
    return TriSurface(radius * np.array(verts), f)
