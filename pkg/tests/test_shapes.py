import numpy as np
import pytest

from sppfem.curve2d import edge_lengths, enclosed_area, perimeter
from sppfem.shapes import (
    ShapeSpec,
    astroid_curve,
    cuboid_surface,
    ellipse_curve,
    flower_curve,
    rectangle_curve,
    sphere_surface,
)
from sppfem.surface3d import enclosed_volume, outward_normals, surface_area, triangle_areas


def test_rectangle_unit_square():
    np.testing.assert_allclose(
        rectangle_curve(1, 1, 4).vertices, [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]
    )


@pytest.mark.parametrize("N", [32, 64, 100, 256])
def test_rectangle_area_and_spacing(N):
    c = rectangle_curve(5.6, 0.8, N)
    assert c.N == N
    assert enclosed_area(c) == pytest.approx(4.48, abs=1e-12)
    assert perimeter(c) == pytest.approx(12.8, abs=1e-12)
    if N % 32 == 0:
        np.testing.assert_allclose(edge_lengths(c), 12.8 / N, rtol=1e-12)
    corners = {(2.8, 0.4), (-2.8, 0.4), (2.8, -0.4), (-2.8, -0.4)}
    have = {tuple(np.round(p, 12)) for p in c.vertices}
    assert corners <= have


def test_rectangle_too_small():
    with pytest.raises(ValueError):
        rectangle_curve(1, 1, 3)


def test_ellipse_circle_is_regular():
    c = ellipse_curve(1.0, 1.0, 24)
    np.testing.assert_allclose(edge_lengths(c), 2 * np.sin(np.pi / 24), rtol=1e-13)


def test_flower_and_astroid_points():
    np.testing.assert_allclose(flower_curve(64).vertices[0], [3.0, 0.0])
    np.testing.assert_allclose(astroid_curve(64).vertices[16], [0.0, 3.0], atol=1e-14)
    assert enclosed_area(astroid_curve(64)) > 0


def test_generators_deterministic():
    for f in (flower_curve, astroid_curve):
        np.testing.assert_array_equal(f(128).vertices, f(128).vertices)


@pytest.mark.parametrize(
    "dims,level,K,J,h",
    [
        ((4, 1, 1), 2, 146, 288, 0.25),
        ((4, 1, 1), 3, 578, 1152, 0.125),
        ((4, 1, 1), 4, 2306, 4608, 0.0625),
        ((8, 1, 1), 3, 1090, 2176, 0.125),
        ((16, 1, 1), 3, 2114, 4224, 0.125),
    ],
)
def test_cuboid_counts(dims, level, K, J, h):
    s = cuboid_surface(*dims, level)
    assert (s.K, s.J) == (K, J)
    assert s.K == s.J // 2 + 2
    assert np.sqrt(triangle_areas(s).max()) == pytest.approx(h, rel=1e-12)
    lx, ly, lz = dims
    assert enclosed_volume(s) == pytest.approx(lx * ly * lz, rel=1e-12)
    assert surface_area(s) == pytest.approx(2 * (lx * ly + ly * lz + lx * lz), rel=1e-12)


def test_sphere_levels():
    s0 = sphere_surface(1.0, 0)
    assert (s0.K, s0.J) == (12, 20)
    vols = [enclosed_volume(sphere_surface(1.0, k)) for k in range(5)]
    assert all(np.diff(vols) > 0)
    assert vols[-1] < 4 / 3 * np.pi
    assert vols[-1] == pytest.approx(4 / 3 * np.pi, rel=5e-3)


def test_sphere_normals_radial():
    s = sphere_surface(2.0, 3)
    n = outward_normals(s).values
    c = s.vertices[s.triangles].mean(axis=1)
    cos = np.sum(n * c, axis=1) / np.linalg.norm(c, axis=1)
    assert cos.min() > 0.99


def test_shape_spec():
    spec = ShapeSpec("ellipse", {"a": 2.0, "b": 1.0}, 16)
    assert spec.dimension == 2
    assert spec.build().N == 16
    assert ShapeSpec("cuboid", {}, 2).build().J == 288
    with pytest.raises(ValueError):
        ShapeSpec("torus")
    with pytest.raises(ValueError):
        ShapeSpec("ellipse", {"a": -1.0})
    with pytest.raises(ValueError):
        ShapeSpec("ellipse", {}, 2)
