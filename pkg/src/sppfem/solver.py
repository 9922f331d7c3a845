"""Solver controls and per-step reports shared by the 2D and 3D flows."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SolverParams:
    """Time step and nonlinear-iteration controls.

    ``method`` is ``"newton"`` or ``"picard"``; ``linear_solver`` is
    ``"direct"``, ``"iterative"`` or ``"auto"``. With ``fallback`` a failed
    Newton solve is retried with Picard iterations before giving up.
    """

    tau: float
    tol: float = 1e-10
    max_iters: int = 50
    method: str = "newton"
    linear_solver: str = "auto"
    fallback: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("newton", "picard"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.linear_solver not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class StepReport:
    iterations: int
    final_increment_norms: tuple[float, float]
    converged: bool
    method: str = "newton"
    history: list[tuple[float, float]] = field(default_factory=list)
    fallback_used: bool = False
    # tau * (d_s kappa^{m+1}, d_s kappa^{m+1}) on Gamma^m
    dissipation: float = float("nan")


def steps_for(t: float, tau: float) -> int:
    """Number of steps reaching ``t``; raises if ``t`` is not a multiple of tau."""
    n = int(round(t / tau))
    if abs(n * tau - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a multiple of tau={tau}")
    return n
