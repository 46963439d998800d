"""Projection of the full-order model on a reduced basis.

The reduced model drives the projected residual ``Phi^T R`` to zero with
Newton in reduced coordinates; its hyper-reduced counterpart replaces the
sum over all elements with a weighted sum over the selected elements of a
cubature rule.  Elemental projected residuals collected at converged
steps feed the cubature training stage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import blocks
from .blocks import BlockedMatrix, BlockShape, ColumnFiller
from .cubature import CubatureRule
from .fem import kernels
from .fem.problem import FomProblem, ParamPoint, step_parameters
from .fem.solver import NewtonError, _Assembler, _effective_fields
from .svd import Basis


def relative_error(a, b) -> float:
    """Frobenius distance of a from b, relative to b."""
    if isinstance(a, BlockedMatrix) or isinstance(b, BlockedMatrix):
        norm_b = blocks.frobenius_norm(b)
        if norm_b == 0.0:
            raise ValueError("reference matrix has zero norm")
        return blocks.frobenius_norm(blocks.sub(a, b)) / norm_b
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        raise ValueError("reference matrix has zero norm")
    return float(np.linalg.norm(a - b)) / norm_b


def _element_basis(phi: np.ndarray, dof_map: np.ndarray) -> np.ndarray:
    # (n_el, 3, n_modes): basis rows per element slot, zero at constrained slots
    gathered = phi[np.maximum(dof_map, 0)]
    return np.where(dof_map[:, :, None] >= 0, gathered, 0.0)


class RomModel:
    """Reduced model: problem plus truncated basis, with dense caches."""

    def __init__(self, problem: FomProblem, basis: Basis):
        if basis.vectors.global_rows != problem.mesh.n_dofs:
            raise ValueError(
                f"basis has {basis.vectors.global_rows} rows, problem has {problem.mesh.n_dofs} dofs"
            )
        self.problem = problem
        self.basis = basis
        self.phi = blocks.to_dense(basis.vectors)
        self.phi_elem = _element_basis(self.phi, problem.mesh.element_dof_map)

    @property
    def n_modes(self) -> int:
        return self.phi.shape[1]


@dataclass
class RomResult:
    reduced_states: np.ndarray        # (n_modes, n_steps)
    states: np.ndarray                # (n_dofs, n_steps)
    projected_residuals: np.ndarray   # (n_steps, n_el, n_modes), converged steps only
    log: tuple
    seconds: float


def solve_rom(model: RomModel, mu: ParamPoint, schedule=None, initial=None,
              record_residuals: bool = True) -> RomResult:
    """March the reduced model; record elemental projected residuals.

    Newton starts each step from the previous converged reduced state and
    stops on the projected residual norm.  After convergence one elemental
    pass evaluates every element's residual and projects it on the
    element's basis rows; those vectors sum (over elements) to the final
    projected residual of the step.
    """
    t0 = time.perf_counter()
    problem = model.problem
    mesh = problem.mesh
    asm = _Assembler(problem)
    phi = model.phi
    n = model.n_modes
    steps = step_parameters(problem, mu, schedule)
    all_idx = np.arange(mesh.n_elements, dtype=np.int64)

    q = np.zeros(n) if initial is None else phi.T @ np.asarray(initial, dtype=np.float64)
    reduced = np.empty((n, len(steps)))
    states = np.empty((mesh.n_dofs, len(steps)))
    proj = np.empty((len(steps), mesh.n_elements, n)) if record_residuals else None
    log = []
    reduced_ops = {}

    for step, (q_eff, s_eff) in enumerate(steps):
        vel, src = _effective_fields(problem, q_eff, s_eff)
        q_prev = q.copy()
        d_prev = phi @ q_prev
        tp_full = mesh.full_state(d_prev)

        def projected_residual(qv):
            t_full = mesh.full_state(phi @ qv)
            r = kernels.assemble_residual(
                mesh.elements, mesh.areas, mesh.grads, t_full, tp_full, vel, src,
                problem.dt, problem.theta, problem.diffusivity, problem.reaction_cubic,
                mesh.element_dof_map, mesh.n_dofs,
            )
            return phi.T @ r

        r_red = projected_residual(q)
        r0 = np.linalg.norm(r_red)
        rn = r0
        iters = 0
        while rn > max(problem.newton_tol * r0, problem.newton_floor):
            if iters >= problem.newton_max_iter:
                raise NewtonError(step, rn, problem.newton_max_iter)
            if problem.reaction_cubic == 0.0:
                op = reduced_ops.get(s_eff)
                if op is None:
                    op = phi.T @ (asm.matrix(phi @ q, vel) @ phi)
                    reduced_ops[s_eff] = op
            else:
                op = phi.T @ (asm.matrix(phi @ q, vel) @ phi)
            q = q - np.linalg.solve(op, r_red)
            r_red = projected_residual(q)
            rn = np.linalg.norm(r_red)
            iters += 1

        reduced[:, step] = q
        states[:, step] = phi @ q
        if record_residuals:
            rloc = kernels.element_residuals(
                all_idx, mesh.elements, mesh.areas, mesh.grads,
                mesh.full_state(states[:, step]), tp_full, vel, src,
                problem.dt, problem.theta, problem.diffusivity, problem.reaction_cubic,
            )
            proj[step] = np.einsum("eak,ea->ek", model.phi_elem, rloc)
        log.append((step, iters, float(rn)))
    return RomResult(reduced, states, proj, tuple(log), time.perf_counter() - t0)


@dataclass
class ProjectedResidualSet:
    """Elemental projected residuals of every converged reduced solve.

    Row e of ``matrix`` concatenates, solve by solve and step by step,
    the n_modes-vector that element e contributed to the projected
    residual; the column group of solve i, step t starts at
    ``(i * time_steps + t) * n_modes``.
    """

    matrix: BlockedMatrix
    n_modes: int
    time_steps: int
    params: tuple[ParamPoint, ...]


@dataclass
class RomCollection:
    residuals: ProjectedResidualSet
    snapshots: BlockedMatrix   # reduced-solution snapshots, FOM layout
    logs: tuple
    solve_seconds: tuple


def collect_projected_residuals(model: RomModel, params, snapshot_blocks: BlockShape | None = None,
                                residual_blocks: BlockShape | None = None,
                                pool=None) -> RomCollection:
    """Run the reduced model over all parameter points.

    Returns the elemental projected residual matrix together with the
    reconstructed solution snapshots (for verification against the
    full-order snapshots).  Solves are independent tasks.
    """
    params = tuple(params)
    if not params:
        raise ValueError("no parameter points given")
    problem = model.problem
    n_t = problem.time_steps
    n = model.n_modes
    n_el = problem.mesh.n_elements
    if snapshot_blocks is None:
        snapshot_blocks = BlockShape(min(problem.mesh.n_dofs, 256), min(len(params) * n_t, 64))
    if residual_blocks is None:
        residual_blocks = BlockShape(min(n_el, 256), min(len(params) * n_t * n, 64))

    snap = ColumnFiller(problem.mesh.n_dofs, len(params) * n_t, snapshot_blocks)
    resid = ColumnFiller(n_el, len(params) * n_t * n, residual_blocks)
    results = blocks._map_blocks(
        [(i, (model, mu)) for i, mu in enumerate(params)],
        solve_rom,
        pool,
    )
    for i in range(len(params)):
        snap.fill(i * n_t, results[i].states)
        # (n_steps, n_el, n) -> (n_el, n_steps * n) keeping step-major column groups
        stacked = np.transpose(results[i].projected_residuals, (1, 0, 2)).reshape(n_el, n_t * n)
        resid.fill(i * n_t * n, stacked)
    return RomCollection(
        ProjectedResidualSet(resid.finish(), n, n_t, params),
        snap.finish(),
        tuple(results[i].log for i in range(len(params))),
        tuple(results[i].seconds for i in range(len(params))),
    )


class HromModel:
    """Hyper-reduced model: reduced operators assembled over a cubature rule."""

    def __init__(self, problem: FomProblem, basis: Basis, rule: CubatureRule):
        self.problem = problem
        self.basis = basis
        self.rule = rule
        mesh = problem.mesh
        if rule.elements.size == 0:
            raise ValueError("empty cubature rule")
        if rule.elements.min() < 0 or rule.elements.max() >= mesh.n_elements:
            raise ValueError("cubature rule indexes elements outside the mesh")
        if np.any(rule.weights <= 0):
            raise ValueError("cubature weights must be positive")
        self.phi = blocks.to_dense(basis.vectors)
        self.selected = rule.elements.astype(np.int64)
        self.weights = rule.weights
        self.phi_elem = _element_basis(self.phi, mesh.element_dof_map)[self.selected]
        # nodes touched by the selected elements; only these need lifting
        touched = np.unique(mesh.elements[self.selected])
        dofs = mesh.node_dof[touched]
        self.touched_nodes = touched[dofs >= 0]
        self.touched_dofs = dofs[dofs >= 0]
        self.phi_touched = self.phi[self.touched_dofs]

    @property
    def n_modes(self) -> int:
        return self.phi.shape[1]


@dataclass
class HromResult:
    reduced_states: np.ndarray       # (n_modes, n_steps)
    states: np.ndarray | None        # (n_dofs, n_steps) in full_projection mode
    log: tuple
    seconds: float
    kernel_elements: int             # elements passed to residual kernels, total
    elements_per_assembly: int


def solve_hrom(model: HromModel, mu: ParamPoint, schedule=None, initial=None,
               mode: str = "selected_only") -> HromResult:
    """March the hyper-reduced model.

    ``selected_only`` evaluates states only at nodes the selected
    elements touch; ``full_projection`` additionally reconstructs the
    full state every step for downstream consumers.  Both assemble
    residual and derivative over the rule's elements alone.
    """
    if mode not in ("selected_only", "full_projection"):
        raise ValueError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    problem = model.problem
    mesh = problem.mesh
    phi = model.phi
    sel = model.selected
    w = model.weights
    n = model.n_modes
    steps = step_parameters(problem, mu, schedule)

    q = np.zeros(n) if initial is None else phi.T @ np.asarray(initial, dtype=np.float64)
    reduced = np.empty((n, len(steps)))
    states = np.empty((mesh.n_dofs, len(steps))) if mode == "full_projection" else None
    log = []
    ops = {}
    kernel_elements = 0

    # scratch nodal vectors; untouched entries are never read by the kernels
    t_scratch = np.zeros(mesh.n_nodes)
    tp_scratch = np.zeros(mesh.n_nodes)
    for buf in (t_scratch, tp_scratch):
        buf[mesh.dirichlet_nodes] = mesh.dirichlet_values

    def lift(qv, buf):
        if mode == "full_projection":
            full = mesh.full_state(phi @ qv)
            buf[:] = full
        else:
            buf[model.touched_nodes] = model.phi_touched @ qv
        return buf

    for step, (q_eff, s_eff) in enumerate(steps):
        vel, src = _effective_fields(problem, q_eff, s_eff)
        q_prev = q.copy()
        lift(q_prev, tp_scratch)

        def reduced_residual(qv):
            nonlocal kernel_elements
            lift(qv, t_scratch)
            rloc = kernels.element_residuals(
                sel, mesh.elements, mesh.areas, mesh.grads, t_scratch, tp_scratch,
                vel, src, problem.dt, problem.theta, problem.diffusivity,
                problem.reaction_cubic,
            )
            kernel_elements += sel.size
            return np.einsum("e,eak,ea->k", w, model.phi_elem, rloc)

        def reduced_matrix(qv):
            jloc = kernels.element_jacobians(
                sel, mesh.elements, mesh.areas, mesh.grads, t_scratch, vel,
                problem.dt, problem.theta, problem.diffusivity, problem.reaction_cubic,
            )
            return np.einsum("e,eak,eab,ebl->kl", w, model.phi_elem, jloc, model.phi_elem)

        r_red = reduced_residual(q)
        r0 = np.linalg.norm(r_red)
        rn = r0
        iters = 0
        while rn > max(problem.newton_tol * r0, problem.newton_floor):
            if iters >= problem.newton_max_iter:
                raise NewtonError(step, rn, problem.newton_max_iter)
            if problem.reaction_cubic == 0.0:
                op = ops.get(s_eff)
                if op is None:
                    op = reduced_matrix(q)
                    ops[s_eff] = op
            else:
                op = reduced_matrix(q)
            q = q - np.linalg.solve(op, r_red)
            r_red = reduced_residual(q)
            rn = np.linalg.norm(r_red)
            iters += 1

        reduced[:, step] = q
        if states is not None:
            states[:, step] = phi @ q
        log.append((step, iters, float(rn)))
    return HromResult(reduced, states, tuple(log), time.perf_counter() - t0,
                      kernel_elements, int(sel.size))


def reconstruct_states(model, reduced_states: np.ndarray) -> np.ndarray:
    """Full states from reduced coordinates (columns are steps)."""
    return model.phi @ reduced_states
