"""Structure-preserving parametric finite elements for surface diffusion.

Closed polygonal curves in the plane and closed triangulated surfaces in
space are evolved by a semi-implicit scheme that conserves the enclosed
area (volume) exactly and decreases the perimeter (surface area).
"""

from .curve2d import PolygonalCurve, enclosed_area, mesh_ratio, perimeter
from .errors import ConvergenceError, DegenerateMeshError, KrylovError, SingularSystemError
from .flow2d import FlowState2D, Trajectory2D, evolve, relax, solve_timestep
from .flow3d import FlowState3D, PinchGuard, Trajectory3D, evolve_3d, solve_timestep_3d
from .metrics import convergence_table, manifold_distance_2d, manifold_distance_3d
from .shapes import (
    ShapeSpec,
    astroid_curve,
    cuboid_surface,
    ellipse_curve,
    flower_curve,
    rectangle_curve,
    sphere_surface,
)
from .solver import SolverParams, StepReport
from .surface3d import TriSurface, enclosed_volume, surface_area

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DegenerateMeshError",
    "FlowState2D",
    "FlowState3D",
    "KrylovError",
    "PinchGuard",
    "PolygonalCurve",
    "ShapeSpec",
    "SingularSystemError",
    "SolverParams",
    "StepReport",
    "TriSurface",
    "Trajectory2D",
    "Trajectory3D",
    "astroid_curve",
    "convergence_table",
    "cuboid_surface",
    "ellipse_curve",
    "enclosed_area",
    "enclosed_volume",
    "evolve",
    "evolve_3d",
    "flower_curve",
    "manifold_distance_2d",
    "manifold_distance_3d",
    "mesh_ratio",
    "perimeter",
    "rectangle_curve",
    "relax",
    "solve_timestep",
    "solve_timestep_3d",
    "sphere_surface",
    "surface_area",
]
