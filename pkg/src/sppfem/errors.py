"""Exception types raised across the package."""


class DegenerateMeshError(ValueError):
    """A curve edge or surface triangle has (numerically) vanished."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SingularSystemError(RuntimeError):
    """A sparse factorization broke down or produced an unusable solution."""


class KrylovError(RuntimeError):
    """GMRES failed to reach the requested tolerance."""


class ConvergenceError(RuntimeError):
    """The nonlinear iteration of a time step did not converge."""
