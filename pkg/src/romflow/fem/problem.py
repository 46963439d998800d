"""Problem definition for the transient thermal model.

A solve is driven by a parameter point (source intensity and velocity
scale) and a schedule of phases.  Phases switch the source and the
convection field on or off and may override the parameter point, which
is how start-stop scenarios with different operating points per phase
are expressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..blocks import BlockedMatrix
from .mesh import Mesh


@dataclass(frozen=True)
class ParamPoint:
    """Operating point: volumetric source intensity and velocity scale."""

    q_dot: float
    vel_scale: float


@dataclass(frozen=True)
class Phase:
    """A run segment of ``steps`` time steps.

    ``source_on``/``velocity_on`` gate the forcing and the convection
    field; ``q_dot``/``vel_scale`` override the run's parameter point
    when set.
    """

    steps: int
    source_on: bool = True
    velocity_on: bool = True
    q_dot: float | None = None
    vel_scale: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a phase needs at least one step")


@dataclass
class FomProblem:
    """Full-order transient convection-diffusion(-reaction) problem."""

    mesh: Mesh
    velocity_field: np.ndarray          # (n_nodes, 2), scaled by vel_scale at solve time
    diffusivity: float
    time_steps: int
    dt: float
    theta: float = 1.0
    reaction_cubic: float = 0.0
    schedule: tuple[Phase, ...] | None = None
    source_profile: np.ndarray | None = None  # per-node source shape, default uniform
    # tight tolerance keeps converged-residual noise well below the
    # truncation floor of the cubature training matrix
    newton_tol: float = 1e-12
    newton_floor: float = 1e-14
    newton_max_iter: int = 25

    def __post_init__(self):
        self.velocity_field = np.asarray(self.velocity_field, dtype=np.float64)
        if self.velocity_field.shape != (self.mesh.n_nodes, 2):
            raise ValueError(f"velocity field shape {self.velocity_field.shape} does not fit the mesh")
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be positive")
        if self.dt <= 0 or self.time_steps < 1:
            raise ValueError("need dt > 0 and at least one time step")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.source_profile is not None:
            self.source_profile = np.asarray(self.source_profile, dtype=np.float64)
            if self.source_profile.shape != (self.mesh.n_nodes,):
                raise ValueError("source profile must hold one value per node")
        if self.schedule is not None:
            self.schedule = tuple(self.schedule)
            total = sum(ph.steps for ph in self.schedule)
            if total != self.time_steps:
                raise ValueError(f"schedule covers {total} steps, problem declares {self.time_steps}")


def step_parameters(problem: FomProblem, mu: ParamPoint, schedule=None) -> list[tuple[float, float]]:
    """Effective (source, velocity scale) per time step under a schedule."""
    phases = tuple(schedule) if schedule is not None else problem.schedule
    if phases is None:
        phases = (Phase(problem.time_steps),)
    out = []
    for ph in phases:
        q = ph.q_dot if ph.q_dot is not None else mu.q_dot
        s = ph.vel_scale if ph.vel_scale is not None else mu.vel_scale
        if not ph.source_on:
            q = 0.0
        if not ph.velocity_on:
            s = 0.0
        out.extend([(q, s)] * ph.steps)
    return out


@dataclass
class SnapshotSet:
    """States of several solves, one column block per parameter point.

    Column ``i * time_steps + t`` holds the state after step t of solve i.
    """

    params: tuple[ParamPoint, ...]
    snapshots: BlockedMatrix
    time_steps: int
    logs: tuple = ()
    solve_seconds: tuple = ()

    def column_range(self, i: int) -> tuple[int, int]:
        return i * self.time_steps, (i + 1) * self.time_steps
