"""Structure-preserving time stepping for surface diffusion of closed curves.

Each step solves the weakly nonlinear system

    ((X - X^m)/tau . n^{m+1/2}, psi)^h + (d_s kappa, d_s psi) = 0
    (kappa, n^{m+1/2} . omega)^h - (d_s X, d_s omega)           = 0

on ``Gamma^m`` for the new vertices ``X`` and curvature ``kappa``, where the
per-edge normal ``n^{m+1/2}`` averages the rotated edge vectors of the old
and the new curve. With that normal the enclosed area is conserved exactly
and the perimeter never increases.

Unknowns are interleaved per vertex as ``(x_j, y_j, kappa_j)``. Row ``3j``
and ``3j + 1`` hold the curvature equation tested with the two components
of the vector hat at vertex ``j``; row ``3j + 2`` holds the velocity
equation tested with the scalar hat.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import sparse_linalg
from .curve2d import (
    EdgeField,
    PolygonalCurve,
    check_edges,
    enclosed_area,
    mesh_ratio,
    perimeter,
    rot,
)
from .errors import ConvergenceError, DegenerateMeshError, SingularSystemError
from .solver import SolverParams, StepReport, steps_for
from .sparse_linalg import SparseSystem
from .trace import TRACE_2D_COLUMNS, FlowTrace

logger = logging.getLogger(__name__)

_R = np.array([[0.0, 1.0], [-1.0, 0.0]])  # rot(v) == _R @ v
_I2 = np.eye(2)


@dataclass(frozen=True)
class FlowState2D:
    curve: PolygonalCurve
    curvature: np.ndarray
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        kappa = np.array(self.curvature, dtype=float)
        if kappa.shape != (self.curve.N,):
            raise ValueError(f"curvature has shape {kappa.shape}, expected ({self.curve.N},)")
        kappa.setflags(write=False)
        object.__setattr__(self, "curvature", kappa)

    @classmethod
    def initial(cls, curve: PolygonalCurve, time: float = 0.0) -> "FlowState2D":
        return cls(curve, initial_curvature(curve), time, 0)


def _X(curve) -> np.ndarray:
    if isinstance(curve, PolygonalCurve):
        return curve.vertices
    return np.asarray(curve, dtype=float)


def pack(X: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    return np.column_stack([X, kappa]).ravel()


def unpack(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = z.reshape(-1, 3)
    return Z[:, :2], Z[:, 2]


def semi_implicit_normal(curve_m, curve_next) -> EdgeField:
    """Per-edge ``-(1/2)|h^m|^{-1} (h^m + h^{m+1})^perp``.

    Equals the outward unit normal of ``curve_m`` when both curves agree.
    """
    Xm, Xn = _X(curve_m), _X(curve_next)
    if Xm.shape != Xn.shape:
        raise ValueError(f"vertex counts differ: {Xm.shape} vs {Xn.shape}")
    w = check_edges(Xm)
    hm = np.roll(Xm, -1, axis=0) - Xm
    hn = np.roll(Xn, -1, axis=0) - Xn
    return EdgeField(0.5 * rot(hm + hn) / w[:, None])


def initial_curvature(curve) -> np.ndarray:
    """Discrete curvature from the curvature equation with the explicit normal.

    The equation gives two conditions per vertex for one unknown; each
    vertex value is their least-squares solution, i.e. the discrete
    curvature vector projected on the lumped vertex normal.
    """
    X = _X(curve)
    w = check_edges(X)
    h = np.roll(X, -1, axis=0) - X
    t = h / w[:, None]
    s = 0.5 * (rot(h) + np.roll(rot(h), 1, axis=0))  # edges j-1 and j meet at vertex j
    rhs = np.roll(t, 1, axis=0) - t
    ss = np.sum(s * s, axis=1)
    scale = np.max(ss)
    if np.any(ss <= 1e-28 * scale):
        k = int(np.argmin(ss))
        raise SingularSystemError(f"lumped vertex normal vanishes at vertex {k}")
    return np.sum(rhs * s, axis=1) / ss


def _edge_data(Xm, X, kappa):
    N = Xm.shape[0]
    a = np.arange(N)
    b = np.roll(a, -1)
    hm = Xm[b] - Xm[a]
    w = np.linalg.norm(hm, axis=1)
    hn = X[b] - X[a]
    nu = 0.5 * rot(hm + hn)  # |h^m| n^{m+1/2}
    dX = X - Xm
    return a, b, w, hn, nu, dX


def _residual(Xm, X, kappa, tau) -> np.ndarray:
    N = Xm.shape[0]
    a, b, w, hn, nu, dX = _edge_data(Xm, X, kappa)
    Ra = np.zeros(N)
    Rb = np.zeros((N, 2))
    flux = (kappa[b] - kappa[a]) / w
    np.add.at(Ra, a, np.sum(nu * dX[a], axis=1) / (2 * tau) - flux)
    np.add.at(Ra, b, np.sum(nu * dX[b], axis=1) / (2 * tau) + flux)
    tw = hn / w[:, None]
    np.add.at(Rb, a, 0.5 * kappa[a, None] * nu + tw)
    np.add.at(Rb, b, 0.5 * kappa[b, None] * nu - tw)
    return np.column_stack([Rb, Ra]).ravel()


def _local_matrices(Xm, X, kappa, tau, newton: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge 6x6 Jacobian blocks over dofs (xa, ya, ka, xb, yb, kb)."""
    a, b, w, hn, nu, dX = _edge_data(Xm, X, kappa)
    N = a.size
    c = 1.0 if newton else 0.0
    inv_w = 1.0 / w
    M = np.zeros((N, 6, 6))
    # velocity equation, test hat at a (row 2) and at b (row 5)
    M[:, 2, 0:2] = (nu + 0.5 * c * rot(dX[a])) / (2 * tau)
    M[:, 2, 3:5] = -c * rot(dX[a]) / (4 * tau)
    M[:, 5, 3:5] = (nu - 0.5 * c * rot(dX[b])) / (2 * tau)
    M[:, 5, 0:2] = c * rot(dX[b]) / (4 * tau)
    M[:, 2, 2] = inv_w
    M[:, 2, 5] = -inv_w
    M[:, 5, 2] = -inv_w
    M[:, 5, 5] = inv_w
    # curvature equation, vector hats at a (rows 0:2) and b (rows 3:5)
    Iw = inv_w[:, None, None] * _I2
    ka = (c * kappa[a] / 4)[:, None, None] * _R
    kb = (c * kappa[b] / 4)[:, None, None] * _R
    M[:, 0:2, 0:2] = -ka - Iw
    M[:, 0:2, 3:5] = ka + Iw
    M[:, 3:5, 0:2] = -kb + Iw
    M[:, 3:5, 3:5] = kb - Iw
    M[:, 0:2, 2] = 0.5 * nu
    M[:, 3:5, 5] = 0.5 * nu
    dofs = np.column_stack([3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2])
    return M, dofs


def _assemble(Xm, X, kappa, tau, newton) -> sparse_linalg.sp.csr_matrix:
    M, dofs = _local_matrices(Xm, X, kappa, tau, newton)
    rows = np.broadcast_to(dofs[:, :, None], M.shape)
    cols = np.broadcast_to(dofs[:, None, :], M.shape)
    return sparse_linalg.from_arrays(rows, cols, M, 3 * Xm.shape[0])


def assemble_residual(state: FlowState2D, X_next, kappa_next, tau: float) -> np.ndarray:
    """Residual of the discrete system at ``(X_next, kappa_next)``, length 3N."""
    Xm = state.curve.vertices
    X = _X(X_next)
    kappa = np.asarray(kappa_next, dtype=float)
    if X.shape != Xm.shape or kappa.shape != (Xm.shape[0],):
        raise ValueError("shape mismatch between state and iterate")
    return _residual(Xm, X, kappa, tau)


def assemble_newton_system(state: FlowState2D, X_iter, kappa_iter, tau: float) -> SparseSystem:
    """Jacobian of :func:`assemble_residual` and right-hand side ``-residual``."""
    Xm = state.curve.vertices
    X = _X(X_iter)
    kappa = np.asarray(kappa_iter, dtype=float)
    check_edges(Xm)
    A = _assemble(Xm, X, kappa, tau, newton=True)
    return SparseSystem(A, -_residual(Xm, X, kappa, tau))


def assemble_picard_system(state: FlowState2D, X_iter, kappa_iter, tau: float) -> SparseSystem:
    """Linear system with the normal frozen at the current iterate.

    Its solution is the increment from ``(X_iter, kappa_iter)`` to the
    next Picard iterate.
    """
    Xm = state.curve.vertices
    X = _X(X_iter)
    kappa = np.asarray(kappa_iter, dtype=float)
    check_edges(Xm)
    A = _assemble(Xm, X, kappa, tau, newton=False)
    return SparseSystem(A, -_residual(Xm, X, kappa, tau))


def _iterate(state: FlowState2D, params: SolverParams, method: str):
    Xm = state.curve.vertices
    z = pack(Xm, state.curvature)
    assemble = assemble_newton_system if method == "newton" else assemble_picard_system
    history = []
    for i in range(1, params.max_iters + 1):
        X, kappa = unpack(z)
        system = assemble(state, X, kappa, params.tau)
        dz = sparse_linalg.solve(system, params.linear_solver)
        z = z + dz
        dX, dk = unpack(dz)
        norms = (float(np.max(np.linalg.norm(dX, axis=1))), float(np.max(np.abs(dk))))
        history.append(norms)
        if not all(map(math.isfinite, norms)):
            raise ConvergenceError(f"{method} iteration diverged at step {state.step_index + 1}")
        if norms[0] <= params.tol and norms[1] <= params.tol:
            return z, StepReport(i, norms, True, method, history)
    raise ConvergenceError(
        f"{method} did not converge in {params.max_iters} iterations "
        f"(last increments {history[-1][0]:.3e}, {history[-1][1]:.3e})"
    )


def solve_timestep(state: FlowState2D, params: SolverParams) -> tuple[FlowState2D, StepReport]:
    """Advance one time step from the initial guess ``(X^m, kappa^m)``."""
    try:
        z, report = _iterate(state, params, params.method)
    except (ConvergenceError, SingularSystemError) as exc:
        if not params.fallback or params.method == "picard":
            raise
        logger.warning("newton failed at step %d (%s); retrying with picard", state.step_index + 1, exc)
        z, report = _iterate(state, params, "picard")
        report.fallback_used = True
    X, kappa = unpack(z)
    w = np.linalg.norm(np.roll(state.curve.vertices, -1, axis=0) - state.curve.vertices, axis=1)
    report.dissipation = params.tau * float(np.sum((np.roll(kappa, -1) - kappa) ** 2 / w))
    try:
        curve = PolygonalCurve(X)
    except DegenerateMeshError:
        raise
    except ValueError as exc:
        raise DegenerateMeshError(f"step {state.step_index + 1} produced an invalid curve: {exc}") from exc
    new_state = FlowState2D(curve, kappa, state.time + params.tau, state.step_index + 1)
    return new_state, report


@dataclass
class Trajectory2D:
    trace: FlowTrace
    snapshots: dict[float, PolygonalCurve]
    final_state: FlowState2D
    reports: list[StepReport]


def trace_row(state: FlowState2D, area0: float, iterations: int) -> dict:
    area = enclosed_area(state.curve)
    return {
        "step": state.step_index,
        "t": state.time,
        "area": area,
        "perimeter": perimeter(state.curve),
        "mri": mesh_ratio(state.curve),
        "rel_area_loss": (area - area0) / area0,
        "iterations": iterations,
    }


def evolve(
    curve0: PolygonalCurve,
    params: SolverParams,
    t_end: float,
    snapshot_times: Sequence[float] = (),
    observers: Iterable[Callable[[FlowState2D, StepReport], None]] = (),
    state0: FlowState2D | None = None,
) -> Trajectory2D:
    """Run ``t_end / tau`` steps, recording diagnostics after every step."""
    n_steps = steps_for(t_end, params.tau)
    snap_steps = {steps_for(t, params.tau): t for t in snapshot_times}
    observers = list(observers)
    state = state0 if state0 is not None else FlowState2D.initial(curve0)
    area0 = enclosed_area(state.curve)
    trace = FlowTrace(TRACE_2D_COLUMNS)
    trace.append(trace_row(state, area0, 0), dissipation=0.0)
    snapshots = {}
    if 0 in snap_steps:
        snapshots[snap_steps[0]] = state.curve
    reports = []
    for _ in range(n_steps):
        state, report = solve_timestep(state, params)
        reports.append(report)
        trace.append(trace_row(state, area0, report.iterations), dissipation=report.dissipation)
        if state.step_index in snap_steps:
            snapshots[snap_steps[state.step_index]] = state.curve
        for obs in observers:
            obs(state, report)
    return Trajectory2D(trace, snapshots, state, reports)


def relax(
    state: FlowState2D,
    params: SolverParams,
    increment_tol: float = 1e-10,
    max_steps: int = 100000,
) -> tuple[FlowState2D, int]:
    """Step until the change between consecutive steps falls below ``increment_tol``.

    Returns the final state and the number of steps taken. The change is
    the larger of the vertex and curvature infinity norms.
    """
    for n in range(1, max_steps + 1):
        new, _ = solve_timestep(state, params)
        change = max(
            float(np.max(np.linalg.norm(new.curve.vertices - state.curve.vertices, axis=1))),
            float(np.max(np.abs(new.curvature - state.curvature))),
        )
        state = new
        if change < increment_tol:
            return state, n
    raise ConvergenceError(f"no stationary state within {max_steps} steps (last change {change:.3e})")
