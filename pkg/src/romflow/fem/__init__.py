"""Full-order transient thermal model on linear triangles."""

from .interpolate import pod_rbf_interpolate
from .kernels import get_backend
from .mesh import Mesh, recirculating_velocity, unit_square_mesh
from .problem import FomProblem, ParamPoint, Phase, SnapshotSet, step_parameters
from .solver import (
    FomResult,
    NewtonError,
    element_jacobian,
    element_residual,
    generate_snapshots,
    jacobian,
    residual,
    solve_fom,
)

__all__ = [
    "Mesh",
    "unit_square_mesh",
    "recirculating_velocity",
    "FomProblem",
    "ParamPoint",
    "Phase",
    "SnapshotSet",
    "step_parameters",
    "FomResult",
    "NewtonError",
    "residual",
    "jacobian",
    "element_residual",
    "element_jacobian",
    "solve_fom",
    "generate_snapshots",
    "pod_rbf_interpolate",
    "get_backend",
]
