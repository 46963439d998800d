"""Residual assembly and implicit time stepping for the full-order model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .. import blocks
from ..blocks import BlockShape, ColumnFiller
from . import kernels
from .problem import FomProblem, ParamPoint, SnapshotSet, step_parameters


class NewtonError(RuntimeError):
    """Newton ran out of iterations; carries the step and last residual norm."""

    def __init__(self, step: int, residual_norm: float, max_iter: int):
        super().__init__(
            f"step {step}: no convergence after {max_iter} Newton iterations "
            f"(residual norm {residual_norm:.3e})"
        )
        self.step = step
        self.residual_norm = residual_norm


def _effective_fields(problem: FomProblem, q_eff: float, s_eff: float):
    vel = problem.velocity_field * s_eff
    profile = problem.source_profile
    src = np.full(problem.mesh.n_nodes, q_eff) if profile is None else q_eff * profile
    return vel, src


def residual(problem: FomProblem, d, d_prev, mu: ParamPoint, q_eff=None, s_eff=None) -> np.ndarray:
    """Assembled residual over free dofs at state ``d``.

    Equal, bit for bit, to scattering every element residual through
    ``element_dof_map`` in element order.  ``q_eff``/``s_eff`` override
    the plain parameter point when a schedule phase is active.
    """
    mesh = problem.mesh
    vel, src = _effective_fields(
        problem,
        mu.q_dot if q_eff is None else q_eff,
        mu.vel_scale if s_eff is None else s_eff,
    )
    return kernels.assemble_residual(
        mesh.elements, mesh.areas, mesh.grads,
        mesh.full_state(d), mesh.full_state(d_prev), vel, src,
        problem.dt, problem.theta, problem.diffusivity, problem.reaction_cubic,
        mesh.element_dof_map, mesh.n_dofs,
    )


def element_residual(problem: FomProblem, e: int, d_e, d_prev_e, mu: ParamPoint,
                     q_eff=None, s_eff=None) -> np.ndarray:
    """Residual of one element from its three nodal values.

    Entries align with the element's nodes; slots at constrained nodes
    are never assembled but are still reported.
    """
    mesh = problem.mesh
    t = np.zeros(mesh.n_nodes)
    tp = np.zeros(mesh.n_nodes)
    t[mesh.elements[e]] = np.asarray(d_e, dtype=np.float64)
    tp[mesh.elements[e]] = np.asarray(d_prev_e, dtype=np.float64)
    vel, src = _effective_fields(
        problem,
        mu.q_dot if q_eff is None else q_eff,
        mu.vel_scale if s_eff is None else s_eff,
    )
    return kernels.element_residuals(
        np.array([e], dtype=np.int64), mesh.elements, mesh.areas, mesh.grads,
        t, tp, vel, src, problem.dt, problem.theta, problem.diffusivity,
        problem.reaction_cubic,
    )[0]


def element_jacobian(problem: FomProblem, e: int, d_e, mu: ParamPoint,
                     q_eff=None, s_eff=None) -> np.ndarray:
    """Derivative of :func:`element_residual` with respect to ``d_e``."""
    mesh = problem.mesh
    t = np.zeros(mesh.n_nodes)
    t[mesh.elements[e]] = np.asarray(d_e, dtype=np.float64)
    vel, _ = _effective_fields(
        problem,
        mu.q_dot if q_eff is None else q_eff,
        mu.vel_scale if s_eff is None else s_eff,
    )
    return kernels.element_jacobians(
        np.array([e], dtype=np.int64), mesh.elements, mesh.areas, mesh.grads,
        t, vel, problem.dt, problem.theta, problem.diffusivity, problem.reaction_cubic,
    )[0]


class _Assembler:
    """Per-problem scratch: scatter pattern, band layout, factorization cache."""

    def __init__(self, problem: FomProblem):
        self.problem = problem
        mesh = problem.mesh
        dm = mesh.element_dof_map
        rows = np.repeat(dm, 3, axis=1).ravel()
        cols = np.tile(dm, (1, 3)).ravel()
        self._pair_mask = (rows >= 0) & (cols >= 0)
        self._rows = rows[self._pair_mask]
        self._cols = cols[self._pair_mask]
        self._all = np.arange(mesh.n_elements, dtype=np.int64)
        self._lu = {}
        # structured meshes number dofs row by row, so the operator is
        # banded; the LAPACK band solver then does the heavy work with the
        # interpreter lock released, which is what lets independent solves
        # share a thread pool
        bw = int(np.max(np.abs(self._rows - self._cols))) if self._rows.size else 0
        self._bandwidth = bw
        self._banded = mesh.n_dofs > 0 and (3 * bw + 1) <= mesh.n_dofs

    def _element_values(self, d, vel) -> np.ndarray:
        mesh = self.problem.mesh
        p = self.problem
        jloc = kernels.element_jacobians(
            self._all, mesh.elements, mesh.areas, mesh.grads,
            mesh.full_state(d), vel, p.dt, p.theta, p.diffusivity, p.reaction_cubic,
        )
        return jloc.reshape(mesh.n_elements, 9).ravel()[self._pair_mask]

    def matrix(self, d, vel) -> sp.csr_matrix:
        vals = self._element_values(d, vel)
        n = self.problem.mesh.n_dofs
        return sp.coo_matrix((vals, (self._rows, self._cols)), shape=(n, n)).tocsr()

    def _band_factor(self, d, vel):
        kl = ku = self._bandwidth
        n = self.problem.mesh.n_dofs
        ab = np.zeros((2 * kl + ku + 1, n))
        np.add.at(ab, (kl + ku + self._rows - self._cols, self._cols),
                  self._element_values(d, vel))
        lub, ipiv, info = lapack.dgbtrf(ab, kl, ku, overwrite_ab=1)
        if info != 0:
            raise RuntimeError(f"band factorization failed with info={info}")
        return lub, ipiv

    def solve(self, d, vel, rhs, cache_key=None):
        # The operator is state-independent without the cubic reaction, so
        # one factorization per phase suffices.
        cache_key = cache_key if self.problem.reaction_cubic == 0.0 else None
        if self._banded:
            fac = self._lu.get(cache_key) if cache_key is not None else None
            if fac is None:
                fac = self._band_factor(d, vel)
                if cache_key is not None:
                    self._lu[cache_key] = fac
            lub, ipiv = fac
            x, info = lapack.dgbtrs(lub, self._bandwidth, self._bandwidth, rhs, ipiv)
            if info != 0:
                raise RuntimeError(f"band solve failed with info={info}")
            return x
        if cache_key is not None:
            lu = self._lu.get(cache_key)
            if lu is None:
                lu = spla.splu(self.matrix(d, vel).tocsc())
                self._lu[cache_key] = lu
            return lu.solve(rhs)
        return spla.spsolve(self.matrix(d, vel).tocsr(), rhs)


def jacobian(problem: FomProblem, d, mu: ParamPoint, q_eff=None, s_eff=None) -> sp.csr_matrix:
    """Sparse residual derivative over free dofs (Dirichlet eliminated)."""
    vel, _ = _effective_fields(
        problem,
        mu.q_dot if q_eff is None else q_eff,
        mu.vel_scale if s_eff is None else s_eff,
    )
    return _Assembler(problem).matrix(np.asarray(d, dtype=np.float64), vel)


@dataclass
class FomResult:
    states: np.ndarray  # (n_dofs, time_steps)
    log: tuple          # (step, newton_iters, residual_norm) per step
    seconds: float


def solve_fom(problem: FomProblem, mu: ParamPoint, schedule=None, initial=None) -> FomResult:
    """March the full-order model through its schedule.

    Each implicit step runs Newton from the previous state until the
    residual drops by ``newton_tol`` relative to the step's initial
    residual (with ``newton_floor`` as an absolute escape for already
    converged steps).
    """
    t0 = time.perf_counter()
    mesh = problem.mesh
    steps = step_parameters(problem, mu, schedule)
    d = np.zeros(mesh.n_dofs) if initial is None else np.asarray(initial, dtype=np.float64).copy()
    asm = _Assembler(problem)
    states = np.empty((mesh.n_dofs, len(steps)))
    log = []
    for n, (q_eff, s_eff) in enumerate(steps):
        vel, _ = _effective_fields(problem, q_eff, s_eff)
        d_prev = d
        d = d_prev.copy()
        r = residual(problem, d, d_prev, mu, q_eff, s_eff)
        r0 = np.linalg.norm(r)
        iters = 0
        rn = r0
        while rn > max(problem.newton_tol * r0, problem.newton_floor):
            if iters >= problem.newton_max_iter:
                raise NewtonError(n, rn, problem.newton_max_iter)
            d = d - asm.solve(d, vel, r, cache_key=(q_eff, s_eff))
            r = residual(problem, d, d_prev, mu, q_eff, s_eff)
            rn = np.linalg.norm(r)
            iters += 1
        states[:, n] = d
        log.append((n, iters, float(rn)))
    return FomResult(states, tuple(log), time.perf_counter() - t0)


def generate_snapshots(problem: FomProblem, params, block_shape: BlockShape | None = None,
                       pool=None) -> SnapshotSet:
    """Solve every parameter point and gather states into one blocked matrix.

    The matrix is allocated up front from the known shape and filled per
    solve; solves are independent, so they may run on a pool without
    changing the result.
    """
    params = tuple(params)
    if not params:
        raise ValueError("no parameter points given")
    n_t = problem.time_steps
    if block_shape is None:
        block_shape = BlockShape(min(problem.mesh.n_dofs, 256), min(len(params) * n_t, 64))
    filler = ColumnFiller(problem.mesh.n_dofs, len(params) * n_t, block_shape)
    results = blocks._map_blocks(
        [(i, (problem, mu)) for i, mu in enumerate(params)],
        solve_fom,
        pool,
    )
    for i in range(len(params)):
        filler.fill(i * n_t, results[i].states)
    return SnapshotSet(
        params, filler.finish(), n_t,
        logs=tuple(results[i].log for i in range(len(params))),
        solve_seconds=tuple(results[i].seconds for i in range(len(params))),
    )
