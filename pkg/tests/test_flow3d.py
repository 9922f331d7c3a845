import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sppfem.errors import ConvergenceError
from sppfem.flow3d import (
    FlowState3D,
    PinchGuard,
    assemble_newton_system_3d,
    assemble_picard_system_3d,
    assemble_residual_3d,
    evolve_3d,
    initial_mean_curvature,
    pack,
    semi_implicit_normal_3d,
    solve_timestep_3d,
    unpack,
)
from sppfem.shapes import cuboid_surface, sphere_surface
from sppfem.solver import SolverParams
from sppfem.sparse_linalg import solve_direct, solve_krylov
from sppfem.surface3d import (
    TriSurface,
    enclosed_volume,
    orientation_vectors_of,
    outward_normals,
    stiffness_matrix,
    surface_area,
    triangle_areas,
)


def bumpy(seed, level=1, amp=0.1):
    s = sphere_surface(1.0, level)
    rng = np.random.default_rng(seed)
    r = 1.0 + amp * rng.uniform(-1, 1, s.K)
    X = s.vertices * r[:, None] * [1.5, 1.0, 0.8]
    return TriSurface(X, s.triangles)


def test_simpson_normal_examples():
    s = bumpy(0)
    n = outward_normals(s).values
    np.testing.assert_allclose(semi_implicit_normal_3d(s, s.vertices).values, n, atol=1e-14)
    np.testing.assert_allclose(semi_implicit_normal_3d(s, s.vertices + [0.3, -1, 2]).values, n, atol=1e-13)
    np.testing.assert_allclose(semi_implicit_normal_3d(s, 2 * s.vertices).values, 7 / 3 * n, atol=1e-13)


def test_simpson_normal_is_exact_integral():
    s = bumpy(1)
    rng = np.random.default_rng(2)
    Xn = s.vertices + 0.2 * rng.standard_normal(s.vertices.shape)
    nu = semi_implicit_normal_3d(s, Xn).values
    # 5-point Gauss-Legendre on [0, 1]
    x, w = np.polynomial.legendre.leggauss(5)
    a, w = 0.5 * (x + 1), 0.5 * w
    jn = np.linalg.norm(orientation_vectors_of(s.vertices, s.triangles), axis=1)
    total = sum(wi * orientation_vectors_of((1 - ai) * s.vertices + ai * Xn, s.triangles) for ai, wi in zip(a, w))
    np.testing.assert_allclose(nu, total / jn[:, None], atol=1e-13)


def test_initial_mean_curvature_sphere():
    R = 2.0
    errs = []
    for level in (2, 3, 4):
        H = initial_mean_curvature(sphere_surface(R, level))
        errs.append(abs(np.median(H) - 2 / R))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 2e-3
    # away from the twelve valence-5 vertices the pointwise error also decays
    s = sphere_surface(R, 4)
    H = initial_mean_curvature(s)
    valence = np.bincount(s.triangles.ravel(), minlength=s.K)
    assert np.abs(H[valence == 6] - 2 / R).max() < 0.02
    assert np.abs(H[valence == 5] - 2 / R).max() < 0.2


def dense_initial_H(surface):
    K = surface.K
    Jv = orientation_vectors_of(surface.vertices, surface.triangles)
    A = np.zeros((3 * K, K))
    for j, tri in enumerate(surface.triangles):
        for k in tri:
            A[3 * k:3 * k + 3, k] += Jv[j] / 6.0
    L = stiffness_matrix(surface).toarray()
    b = (L @ surface.vertices).reshape(-1)
    return np.linalg.lstsq(A, b, rcond=None)[0]


def test_initial_mean_curvature_cube_dense():
    s = cuboid_surface(1, 1, 1, 2)
    H = initial_mean_curvature(s)
    np.testing.assert_allclose(H, dense_initial_H(s), atol=1e-10)
    X = s.vertices
    on_edge = np.sum(np.isclose(np.abs(X), 0.5), axis=1) >= 2
    assert np.all(np.abs(H[~on_edge]) < 1e-10)
    assert np.all(H[on_edge] > 1.0)


def test_initial_mean_curvature_scaling():
    s = bumpy(3)
    np.testing.assert_allclose(
        initial_mean_curvature(s.transformed(scale=2.5)), initial_mean_curvature(s) / 2.5, rtol=1e-12
    )


def test_residual_volume_identity():
    s = bumpy(4)
    state = FlowState3D.initial(s)
    rng = np.random.default_rng(5)
    tau = 0.01
    Xn = s.vertices + 0.05 * rng.standard_normal(s.vertices.shape)
    Hn = rng.standard_normal(s.K)
    R = assemble_residual_3d(state, Xn, Hn, tau).reshape(-1, 4)
    dV = (enclosed_volume(TriSurface(Xn, s.triangles)) - enclosed_volume(s)) / tau
    assert R[:, 3].sum() == pytest.approx(dV, abs=1e-12 * max(1.0, abs(dV)))


def test_residual_curvature_block_orthogonal_to_normals():
    s = bumpy(6)
    state = FlowState3D.initial(s)
    R = assemble_residual_3d(state, s.vertices, state.mean_curvature, 0.1).reshape(-1, 4)[:, :3]
    Jv = orientation_vectors_of(s.vertices, s.triangles)
    nrm = np.zeros((s.K, 3))
    for c in range(3):
        np.add.at(nrm, s.triangles[:, c], Jv / 6)
    np.testing.assert_allclose(np.sum(R * nrm, axis=1), 0.0, atol=1e-12)


def test_residual_zero_on_sphere_like_octahedron():
    X = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    T = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    s = TriSurface(X, T)
    state = FlowState3D.initial(s)
    R = assemble_residual_3d(state, X, state.mean_curvature, 0.1)
    np.testing.assert_allclose(R, 0.0, atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 1.0))
def test_newton_matrix_is_jacobian(seed, tau):
    s = bumpy(seed)
    state = FlowState3D.initial(s)
    rng = np.random.default_rng(seed + 7)
    X = s.vertices + 0.02 * rng.standard_normal(s.vertices.shape)
    H = state.mean_curvature + rng.standard_normal(s.K)
    z = pack(X, H)
    d = rng.standard_normal(z.size)
    Jd = assemble_newton_system_3d(state, X, H, tau).matrix @ d

    def res(zz):
        return assemble_residual_3d(state, *unpack(zz), tau)

    eps = 1e-7
    fd = (res(z + eps * d) - res(z - eps * d)) / (2 * eps)
    assert np.linalg.norm(Jd - fd) / np.linalg.norm(fd) <= 1e-5


def test_normal_linearization_kills_translations():
    s = bumpy(8)
    state = FlowState3D.initial(s)
    X, H = s.vertices, state.mean_curvature
    A_n = assemble_newton_system_3d(state, X, H, 0.1).matrix
    A_p = assemble_picard_system_3d(state, X, H, 0.1).matrix
    d = pack(np.tile([0.3, -0.2, 0.5], (s.K, 1)), np.zeros(s.K))
    np.testing.assert_allclose((A_n - A_p) @ d, 0.0, atol=1e-12)


def test_sparsity_within_one_ring():
    s = bumpy(9)
    state = FlowState3D.initial(s)
    A = assemble_newton_system_3d(state, s.vertices * 1.01, state.mean_curvature, 0.1).matrix.tocsr()
    nbrs = [set() for _ in range(s.K)]
    for tri in s.triangles:
        for a in tri:
            nbrs[a].update(tri.tolist())
    for v in range(s.K):
        cols = set(A.indices[A.indptr[4 * v]:A.indptr[4 * v + 4]] // 4)
        assert cols <= nbrs[v]


def test_step_conserves_volume_and_dissipates_area():
    s = cuboid_surface(4, 1, 1, 2)
    state = FlowState3D.initial(s)
    V0, W0 = enclosed_volume(s), surface_area(s)
    for _ in range(3):
        new, rep = solve_timestep_3d(state, SolverParams(tau=0.01))
        assert rep.converged
        assert abs(enclosed_volume(new.surface) - enclosed_volume(state.surface)) <= 1e-10 * V0
        assert surface_area(new.surface) <= surface_area(state.surface)
        state = new


def test_krylov_agrees_with_direct_on_step_system():
    s = cuboid_surface(4, 1, 1, 2)
    state = FlowState3D.initial(s)
    sys_ = assemble_newton_system_3d(state, s.vertices * 1.01, state.mean_curvature, 0.01)
    x1 = solve_direct(sys_)
    x2 = solve_krylov(sys_, tol=1e-13)
    assert np.abs(x1 - x2).max() <= 1e-8 * max(1.0, np.abs(x1).max())


def test_iterative_solver_step_matches_direct():
    s = cuboid_surface(4, 1, 1, 2)
    state = FlowState3D.initial(s)
    a, _ = solve_timestep_3d(state, SolverParams(tau=0.01, linear_solver="direct"))
    b, _ = solve_timestep_3d(state, SolverParams(tau=0.01, linear_solver="iterative"))
    np.testing.assert_allclose(a.surface.vertices, b.surface.vertices, atol=1e-9)


def test_non_convergence_raises():
    state = FlowState3D.initial(cuboid_surface(4, 1, 1, 2))
    with pytest.raises(ConvergenceError):
        solve_timestep_3d(state, SolverParams(tau=0.01, max_iters=1, fallback=False))


def test_newton_fewer_iterations_than_picard():
    state = FlowState3D.initial(cuboid_surface(4, 1, 1, 2))
    _, rn = solve_timestep_3d(state, SolverParams(tau=0.01))
    _, rp = solve_timestep_3d(state, SolverParams(tau=0.01, method="picard"))
    assert rn.iterations <= rp.iterations


def test_evolve_trace_and_snapshots():
    s = cuboid_surface(4, 1, 1, 2)
    tr = evolve_3d(s, SolverParams(tau=0.01), 0.05, snapshot_times=[0.0, 0.03])
    assert len(tr.trace) == 6
    assert set(tr.snapshots) == {0.0, 0.03}
    assert not tr.pinched
    assert np.abs(tr.trace["rel_volume_loss"]).max() <= 1e-10
    W = tr.trace["surface_area"]
    assert np.all(np.diff(W) <= 10 * 1e-10 * W[0])
    D = np.cumsum(tr.trace["dissipation"])
    assert np.all(W + D <= W[0] * (1 + 1e-9))


def test_zero_step_run():
    s = cuboid_surface(4, 1, 1, 2)
    tr = evolve_3d(s, SolverParams(tau=0.01), 0.0)
    assert len(tr.trace) == 1
    np.testing.assert_array_equal(tr.final_state.surface.vertices, s.vertices)


def test_pinch_guard_trips_and_validates():
    with pytest.raises(ValueError):
        PinchGuard(1.5)
    s = cuboid_surface(4, 1, 1, 2)
    ref = np.linalg.norm(orientation_vectors_of(s.vertices, s.triangles), axis=1)
    assert PinchGuard().quality(s, ref) == pytest.approx(1.0)
    assert PinchGuard(0.999999).tripped(s.transformed(scale=0.5), ref)
    tr = evolve_3d(s, SolverParams(tau=0.01), 0.05, guard=PinchGuard(0.9))
    assert tr.pinched
    assert tr.pinch_time == pytest.approx(tr.trace["t"][-1])


def test_frame_invariance_3d():
    s = cuboid_surface(2, 1, 1, 1)
    a = 0.4
    R = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    shift = np.array([0.5, 2.0, -1.0])
    p = SolverParams(tau=0.01)
    t1 = evolve_3d(s, p, 0.03)
    t2 = evolve_3d(s.transformed(rotation=R, shift=shift), p, 0.03)
    np.testing.assert_allclose(
        t2.final_state.surface.vertices, t1.final_state.surface.vertices @ R.T + shift, atol=1e-9
    )
