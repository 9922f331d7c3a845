"""Structure-preserving time stepping for surface diffusion of closed surfaces.

The unknowns of a step are the new vertex positions ``X`` (parametrized
over the current mesh ``S^m``) and the mean curvature ``H``:

    ((X - X^m)/tau . n^{m+1/2}, psi)^h + (grad_S H, grad_S psi) = 0
    (H, n^{m+1/2} . omega)^h - (grad_S X, grad_S omega)        = 0

with the per-triangle normal ``n^{m+1/2}`` obtained by Simpson's rule from
the orientation vectors of the old, midpoint and new triangles. Since the
orientation vector is quadratic along the linear path from ``S^m`` to
``S^{m+1}``, Simpson's rule integrates it exactly and the enclosed volume
is conserved.

Unknowns are interleaved per vertex as ``(x, y, z, H)``; rows ``4k..4k+2``
are the curvature equation tested with vector hats, row ``4k + 3`` the
velocity equation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import sparse_linalg
from .errors import ConvergenceError, DegenerateMeshError, SingularSystemError
from .solver import SolverParams, StepReport, steps_for
from .sparse_linalg import SparseSystem
from .surface3d import (
    TriField,
    TriSurface,
    check_triangles,
    enclosed_volume,
    orientation_vectors_of,
    stiffness_local,
    surface_area,
)
from .trace import TRACE_3D_COLUMNS, FlowTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowState3D:
    surface: TriSurface
    mean_curvature: np.ndarray
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        H = np.array(self.mean_curvature, dtype=float)
        if H.shape != (self.surface.K,):
            raise ValueError(f"mean curvature has shape {H.shape}, expected ({self.surface.K},)")
        H.setflags(write=False)
        object.__setattr__(self, "mean_curvature", H)

    @classmethod
    def initial(cls, surface: TriSurface, time: float = 0.0) -> "FlowState3D":
        return cls(surface, initial_mean_curvature(surface), time, 0)


@dataclass(frozen=True)
class PinchGuard:
    """Stop a run once some triangle has shrunk below a fraction of its initial size.

    The quality measure is ``min_j |J(sigma_j^m)| / |J(sigma_j^0)|``.
    """

    min_quality_ratio: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.min_quality_ratio < 1.0:
            raise ValueError("min_quality_ratio must lie in (0, 1)")

    def quality(self, surface: TriSurface, reference_norms: np.ndarray) -> float:
        jn = np.linalg.norm(orientation_vectors_of(surface.vertices, surface.triangles), axis=1)
        return float(np.min(jn / reference_norms))

    def tripped(self, surface: TriSurface, reference_norms: np.ndarray) -> bool:
        return self.quality(surface, reference_norms) < self.min_quality_ratio


def pack(X: np.ndarray, H: np.ndarray) -> np.ndarray:
    return np.column_stack([X, H]).ravel()


def unpack(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = z.reshape(-1, 4)
    return Z[:, :3], Z[:, 3]


def _simpson_orientation(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``(J(q) + 4 J((q + p)/2) + J(p)) / 6`` for corner arrays of shape (J, 3, 3)."""

    def orient(c):
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    return (orient(q) + 4.0 * orient(0.5 * (q + p)) + orient(p)) / 6.0


def semi_implicit_normal_3d(surface_m: TriSurface, X_next) -> TriField:
    """Simpson-averaged orientation vector divided by ``|J(sigma^m)|``."""
    Xm, T = surface_m.vertices, surface_m.triangles
    X = np.asarray(X_next, dtype=float)
    if X.shape != Xm.shape:
        raise ValueError(f"vertex arrays differ in shape: {Xm.shape} vs {X.shape}")
    jn = check_triangles(Xm, T)
    return TriField(_simpson_orientation(Xm[T], X[T]) / jn[:, None])


def initial_mean_curvature(surface: TriSurface) -> np.ndarray:
    """Mean curvature from the curvature equation with the explicit normal.

    Per vertex the three equations are solved in the least-squares sense:
    ``H_k = s_k . b_k / |s_k|^2`` with ``s_k`` the lumped vertex normal and
    ``b_k`` the stiffness matrix applied to the vertex positions.
    """
    X, T = surface.vertices, surface.triangles
    check_triangles(X, T)
    K = surface.K
    Jv = orientation_vectors_of(X, T)
    s = np.zeros((K, 3))
    for c in range(3):
        np.add.at(s, T[:, c], Jv / 6.0)
    loc = stiffness_local(X, T)
    b = np.zeros((K, 3))
    for k in range(3):
        np.add.at(b, T[:, k], np.einsum("jl,jlc->jc", loc[:, k, :], X[T]))
    ss = np.sum(s * s, axis=1)
    if np.any(ss <= 1e-28 * ss.max()):
        k = int(np.argmin(ss))
        raise SingularSystemError(f"lumped vertex normal vanishes at vertex {k}")
    return np.sum(s * b, axis=1) / ss


class _StepGeometry:
    """Quantities of ``S^m`` that stay fixed during one time step."""

    def __init__(self, surface: TriSurface):
        self.Xm = surface.vertices
        self.T = surface.triangles
        self.K = surface.K
        check_triangles(self.Xm, self.T)
        self.stiff = stiffness_local(self.Xm, self.T)
        T = self.T
        self.dofs = (4 * T[:, :, None] + np.arange(4)).reshape(-1, 12)
        self.pattern = _pattern_for(T, self.dofs, 4 * self.K)


_PATTERNS: dict = {}


def _pattern_for(T, dofs, n) -> sparse_linalg.AssemblyPattern:
    # connectivity never changes during a run, so the pattern is shared by all steps
    key = (n, T.shape, hash(T.tobytes()))
    pat = _PATTERNS.get(key)
    if pat is None:
        if len(_PATTERNS) >= 8:
            _PATTERNS.clear()
        rows = np.broadcast_to(dofs[:, :, None], (dofs.shape[0], 12, 12))
        cols = np.broadcast_to(dofs[:, None, :], (dofs.shape[0], 12, 12))
        pat = _PATTERNS[key] = sparse_linalg.AssemblyPattern(rows, cols, n)
    return pat


def _residual(geo: _StepGeometry, X, H, tau) -> np.ndarray:
    T = geo.T
    q, p = geo.Xm[T], X[T]
    nu = _simpson_orientation(q, p)
    dX = p - q
    Hc = H[T]
    Ra = np.einsum("jc,jkc->jk", nu, dX) / (6.0 * tau) + np.einsum("jkl,jl->jk", geo.stiff, Hc)
    Rb = Hc[:, :, None] * nu[:, None, :] / 6.0 - np.einsum("jkl,jlc->jkc", geo.stiff, p)
    loc = np.concatenate([Rb, Ra[:, :, None]], axis=2).reshape(-1, 12)
    return np.bincount(geo.dofs.ravel(), weights=loc.ravel(), minlength=4 * geo.K)


def _skew(g: np.ndarray) -> np.ndarray:
    S = np.zeros(g.shape[:-1] + (3, 3))
    S[..., 0, 1] = -g[..., 2]
    S[..., 0, 2] = g[..., 1]
    S[..., 1, 0] = g[..., 2]
    S[..., 1, 2] = -g[..., 0]
    S[..., 2, 0] = -g[..., 1]
    S[..., 2, 1] = g[..., 0]
    return S


def _local_matrices(geo: _StepGeometry, X, H, tau, newton: bool) -> np.ndarray:
    T = geo.T
    J = T.shape[0]
    q, p = geo.Xm[T], X[T]
    nu = _simpson_orientation(q, p)
    L = geo.stiff
    M = np.zeros((J, 3, 4, 3, 4))  # (tri, row corner, row dof, col corner, col dof)
    eye = np.eye(3)
    for k in range(3):
        M[:, k, 3, k, :3] += nu / (6.0 * tau)
        M[:, k, :3, k, 3] = nu / 6.0
        for l in range(3):
            M[:, k, 3, l, 3] = L[:, k, l]
            M[:, k, :3, l, :3] = -L[:, k, l, None, None] * eye
    if newton:
        u = 2.0 * p + q
        g = np.stack([u[:, 2] - u[:, 1], u[:, 0] - u[:, 2], u[:, 1] - u[:, 0]], axis=1)
        G = _skew(g)  # G[:, l] @ d == g_l x d
        dX = p - q
        Hc = H[T]
        for k in range(3):
            for l in range(3):
                # d/d(p_l) of dX_k . nu  ->  (dX_k x g_l) / 6
                M[:, k, 3, l, :3] += np.cross(dX[:, k], g[:, l]) / (36.0 * tau)
                M[:, k, :3, l, :3] += (Hc[:, k] / 36.0)[:, None, None] * G[:, l]
    return M.reshape(J, 12, 12)


def _assemble(geo: _StepGeometry, X, H, tau, newton: bool):
    return geo.pattern.matrix(_local_matrices(geo, X, H, tau, newton))


def assemble_residual_3d(state: FlowState3D, X_next, H_next, tau: float) -> np.ndarray:
    """Residual of the discrete system at ``(X_next, H_next)``, length 4K."""
    X = np.asarray(X_next, dtype=float)
    H = np.asarray(H_next, dtype=float)
    if X.shape != state.surface.vertices.shape or H.shape != (state.surface.K,):
        raise ValueError("shape mismatch between state and iterate")
    return _residual(_StepGeometry(state.surface), X, H, tau)


def assemble_newton_system_3d(state: FlowState3D, X_iter, H_iter, tau: float, *, _geo=None) -> SparseSystem:
    """Jacobian of :func:`assemble_residual_3d` with right-hand side ``-residual``."""
    geo = _geo or _StepGeometry(state.surface)
    X = np.asarray(X_iter, dtype=float)
    H = np.asarray(H_iter, dtype=float)
    return SparseSystem(_assemble(geo, X, H, tau, True), -_residual(geo, X, H, tau))


def assemble_picard_system_3d(state: FlowState3D, X_iter, H_iter, tau: float, *, _geo=None) -> SparseSystem:
    """Frozen-normal linear system; its solution is the Picard increment."""
    geo = _geo or _StepGeometry(state.surface)
    X = np.asarray(X_iter, dtype=float)
    H = np.asarray(H_iter, dtype=float)
    return SparseSystem(_assemble(geo, X, H, tau, False), -_residual(geo, X, H, tau))


def _iterate(state, params, method, geo, z0, max_iters):
    assemble = assemble_newton_system_3d if method == "newton" else assemble_picard_system_3d
    z = z0
    history = []
    for i in range(1, max_iters + 1):
        X, H = unpack(z)
        system = assemble(state, X, H, params.tau, _geo=geo)
        dz = sparse_linalg.solve(system, params.linear_solver)
        z = z + dz
        dX, dH = unpack(dz)
        norms = (float(np.max(np.linalg.norm(dX, axis=1))), float(np.max(np.abs(dH))))
        history.append(norms)
        if not all(map(math.isfinite, norms)):
            raise ConvergenceError(f"{method} iteration diverged at step {state.step_index + 1}")
        if norms[0] <= params.tol and norms[1] <= params.tol:
            return z, StepReport(i, norms, True, method, history)
    raise ConvergenceError(
        f"{method} did not converge in {max_iters} iterations "
        f"(last increments {history[-1][0]:.3e}, {history[-1][1]:.3e})"
    )


def solve_timestep_3d(state: FlowState3D, params: SolverParams) -> tuple[FlowState3D, StepReport]:
    """Advance one step from the initial guess ``(X^m, H^m)``.

    If Newton fails and ``params.fallback`` is set, one Picard sweep is made
    from the initial guess and Newton is restarted from its result.
    """
    geo = _StepGeometry(state.surface)
    z0 = pack(state.surface.vertices, state.mean_curvature)
    try:
        z, report = _iterate(state, params, params.method, geo, z0, params.max_iters)
    except (ConvergenceError, SingularSystemError) as exc:
        if not params.fallback or params.method == "picard":
            raise
        logger.warning("newton failed at step %d (%s); one picard sweep then newton", state.step_index + 1, exc)
        z1, _ = _picard_sweep(state, params, geo, z0)
        z, report = _iterate(state, params, "newton", geo, z1, params.max_iters)
        report.iterations += 1
        report.fallback_used = True
    X, H = unpack(z)
    T = geo.T
    # tau * (grad H, grad H) on S^m
    Hc = H[T]
    report.dissipation = params.tau * float(np.einsum("jk,jkl,jl->", Hc, geo.stiff, Hc))
    try:
        surface = TriSurface(X, T)
    except DegenerateMeshError:
        raise
    except ValueError as exc:
        raise DegenerateMeshError(f"step {state.step_index + 1} produced an invalid surface: {exc}") from exc
    return FlowState3D(surface, H, state.time + params.tau, state.step_index + 1), report


def _picard_sweep(state, params, geo, z):
    X, H = unpack(z)
    system = assemble_picard_system_3d(state, X, H, params.tau, _geo=geo)
    dz = sparse_linalg.solve(system, params.linear_solver)
    return z + dz, dz


@dataclass
class Trajectory3D:
    trace: FlowTrace
    snapshots: dict[float, TriSurface]
    final_state: FlowState3D
    reports: list[StepReport]
    pinched: bool = False
    pinch_time: float | None = None
    pinch_reason: str = ""


def trace_row(state: FlowState3D, volume0: float, iterations: int) -> dict:
    V = enclosed_volume(state.surface)
    return {
        "step": state.step_index,
        "t": state.time,
        "volume": V,
        "surface_area": surface_area(state.surface),
        "rel_volume_loss": (V - volume0) / volume0,
        "iterations": iterations,
    }


def evolve_3d(
    surface0: TriSurface,
    params: SolverParams,
    t_end: float,
    guard: PinchGuard | None = None,
    snapshot_times: Sequence[float] = (),
    observers: Iterable[Callable[[FlowState3D, StepReport], None]] = (),
    state0: FlowState3D | None = None,
) -> Trajectory3D:
    """Run up to ``t_end / tau`` steps, stopping early if the guard trips.

    A step whose nonlinear solve breaks down (or that produces a degenerate
    surface) while a guard is active is also reported as pinch-off at the
    time reached so far; without a guard such failures propagate.
    """
    n_steps = steps_for(t_end, params.tau)
    snap_steps = {steps_for(t, params.tau): t for t in snapshot_times}
    observers = list(observers)
    state = state0 if state0 is not None else FlowState3D.initial(surface0)
    ref = np.linalg.norm(orientation_vectors_of(surface0.vertices, surface0.triangles), axis=1)
    volume0 = enclosed_volume(state.surface)
    trace = FlowTrace(TRACE_3D_COLUMNS)
    trace.append(trace_row(state, volume0, 0), dissipation=0.0)
    snapshots = {}
    if 0 in snap_steps:
        snapshots[snap_steps[0]] = state.surface
    reports = []
    for _ in range(n_steps):
        try:
            new, report = solve_timestep_3d(state, params)
        except (ConvergenceError, SingularSystemError, DegenerateMeshError) as exc:
            if guard is None:
                raise
            logger.info("solver breakdown at t=%.6f treated as pinch-off: %s", state.time, exc)
            return Trajectory3D(trace, snapshots, state, reports, True, state.time, f"solver breakdown: {exc}")
        state = new
        reports.append(report)
        trace.append(trace_row(state, volume0, report.iterations), dissipation=report.dissipation)
        if state.step_index in snap_steps:
            snapshots[snap_steps[state.step_index]] = state.surface
        for obs in observers:
            obs(state, report)
        if guard is not None and guard.tripped(state.surface, ref):
            return Trajectory3D(trace, snapshots, state, reports, True, state.time, "triangle quality below threshold")
    return Trajectory3D(trace, snapshots, state, reports)
