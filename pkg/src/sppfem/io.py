"""Plain-text snapshot files for curves and surfaces.

Curves::

    CURVE2D N
    x y            (N lines)

Surfaces::

    SURF3D K J
    x y z          (K lines)
    i j k          (J lines, 0-based)

Coordinates are written with 17 significant digits so that a round trip
reproduces the doubles exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .curve2d import PolygonalCurve
from .surface3d import TriSurface


def format_curve(curve: PolygonalCurve) -> str:
    X = curve.vertices
    lines = [f"CURVE2D {X.shape[0]}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in X]
    return "\n".join(lines) + "\n"


def format_surface(surface: TriSurface) -> str:
    X, T = surface.vertices, surface.triangles
    lines = [f"SURF3D {X.shape[0]} {T.shape[0]}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in X]
    lines += [f"{i} {j} {k}" for i, j, k in T]
    return "\n".join(lines) + "\n"


def write_snapshot(path: str | os.PathLike, shape) -> None:
    """Write a curve or surface, chosen by type."""
    if isinstance(shape, PolygonalCurve):
        text = format_curve(shape)
    elif isinstance(shape, TriSurface):
        text = format_surface(shape)
    else:
        raise TypeError(f"cannot write {type(shape).__name__}")
    Path(path).write_text(text)


def _rows(lines, start, count, width, kind, dtype):
    block = lines[start:start + count]
    if len(block) != count:
        raise ValueError(f"expected {count} {kind} lines, found {len(block)}")
    out = np.empty((count, width), dtype=dtype)
    for i, line in enumerate(block):
        parts = line.split()
        if len(parts) != width:
            raise ValueError(f"{kind} line {i}: expected {width} values, got {len(parts)}")
        out[i] = [dtype(p) for p in parts]
    return out


def parse_snapshot(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty snapshot")
    head = lines[0].split()
    if head[0] == "CURVE2D" and len(head) == 2:
        N = int(head[1])
        X = _rows(lines, 1, N, 2, "vertex", float)
        if len(lines) != N + 1:
            raise ValueError("trailing data after curve vertices")
        return PolygonalCurve(X)
    if head[0] == "SURF3D" and len(head) == 3:
        K, J = int(head[1]), int(head[2])
        X = _rows(lines, 1, K, 3, "vertex", float)
        T = _rows(lines, 1 + K, J, 3, "triangle", int)
        if len(lines) != 1 + K + J:
            raise ValueError("trailing data after triangles")
        return TriSurface(X, T)
    raise ValueError(f"unrecognised snapshot header {lines[0]!r}")


def read_snapshot(path: str | os.PathLike):
    """Read a curve or surface file, detected from its header."""
    return parse_snapshot(Path(path).read_text())
