"""Blocked linear algebra, reduced-order models, and reduced integration rules.

The pipeline runs in five stages: transient full-order solves over a
training set, a truncated factorization of the snapshot matrix, reduced
solves that collect elemental projected residuals, a sparse integration
rule fitted to those residuals, and hyper-reduced solves checked against
the reduced ones.
"""

from . import blocks, cubature, fem, galerkin, svd, workflow
from .blocks import BlockedMatrix, BlockShape, load_bmx, save_bmx
from .cubature import CubatureRule, CubatureToleranceError, PartitionPlan, ecm, partitioned_ecm
from .fem import FomProblem, ParamPoint, Phase, solve_fom
from .galerkin import HromModel, RomModel, relative_error, solve_hrom, solve_rom
from .svd import Basis, LanczosParams, TruncationSpec, full_svd, lanczos_svd, randomized_svd
from .workflow import WorkflowConfig, load_config, run_workflow

__version__ = "0.1.0"

__all__ = [
    "blocks", "cubature", "fem", "galerkin", "svd", "workflow",
    "BlockedMatrix", "BlockShape", "load_bmx", "save_bmx",
    "CubatureRule", "CubatureToleranceError", "PartitionPlan", "ecm", "partitioned_ecm",
    "FomProblem", "ParamPoint", "Phase", "solve_fom",
    "HromModel", "RomModel", "relative_error", "solve_hrom", "solve_rom",
    "Basis", "LanczosParams", "TruncationSpec", "full_svd", "lanczos_svd", "randomized_svd",
    "WorkflowConfig", "load_config", "run_workflow",
    "__version__",
]
