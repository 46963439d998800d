"""Orthogonal factorizations of tall blocked matrices.

Three routes to a truncated left singular basis:

* :func:`full_svd` — TSQR of the whole matrix, then an exact SVD of the
  small triangular factor.
* :func:`randomized_svd` — Gaussian range sketching, growing the range in
  fixed-width column blocks until the measured residual meets the
  tolerance.
* :func:`lanczos_svd` — block Krylov iteration on ``A.T A`` with full
  reorthogonalization, Ritz refinement and thick restarts.

All three return a :class:`Basis` whose columns follow one sign
convention: the entry of largest magnitude in each column is positive
(first occurrence wins ties).  Results depend only on the input, the
parameters and the seed, never on the worker pool.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import blocks
from .blocks import BlockedMatrix, BlockShape

_GROWTH_BLOCK = 8  # range-sketch growth step of randomized_svd


@dataclass(frozen=True)
class TruncationSpec:
    """How many singular vectors to retain.

    ``tolerance`` mode keeps the smallest count whose discarded tail
    satisfies ``sum(sigma_tail**2) <= epsilon**2 * sum(sigma**2)``;
    ``fixed_rank`` keeps exactly ``rank`` (capped by the number of
    positive singular values).  At least one vector is always kept.
    """

    mode: str
    epsilon: float = 0.0
    rank: int = 0

    def __post_init__(self):
        if self.mode not in ("tolerance", "fixed_rank"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "tolerance" and not self.epsilon > 0:
            raise ValueError("tolerance mode needs epsilon > 0")
        if self.mode == "fixed_rank" and self.rank < 1:
            raise ValueError("fixed_rank mode needs rank >= 1")

    @classmethod
    def tolerance(cls, epsilon: float) -> "TruncationSpec":
        return cls("tolerance", epsilon=float(epsilon))

    @classmethod
    def fixed_rank(cls, rank: int) -> "TruncationSpec":
        return cls("fixed_rank", rank=int(rank))


@dataclass
class Basis:
    """Truncated left singular basis of a tall matrix."""

    vectors: BlockedMatrix
    singular_values: np.ndarray
    truncation: TruncationSpec
    achieved_error: float

    @property
    def n_modes(self) -> int:
        return self.vectors.global_cols


@dataclass(frozen=True)
class LanczosParams:
    """Knobs of :func:`lanczos_svd`.

    ``k`` caps the Krylov subspace width, ``rank`` is the number of Ritz
    directions kept across thick restarts, ``nsv`` is how many leading
    singular values are monitored for convergence
    (``nsv <= rank <= k``).
    """

    k: int
    rank: int
    nsv: int
    block_cols: int = 8
    convergence_tol: float = 1e-9
    max_outer_iterations: int = 200

    def __post_init__(self):
        if not (1 <= self.nsv <= self.rank <= self.k):
            raise ValueError(f"need 1 <= nsv <= rank <= k, got nsv={self.nsv} rank={self.rank} k={self.k}")
        if self.block_cols < 1:
            raise ValueError("block_cols must be >= 1")


class LanczosNonConvergence(RuntimeError):
    """Raised when the iteration budget runs out; carries the best iterate."""

    def __init__(self, message: str, best: Basis | None = None):
        super().__init__(message)
        self.best = best


def _gaussian(rows: int, cols: int, seed: int, block_index: int) -> np.ndarray:
    # Counter-based bit generator: (seed, block_index) keys an independent
    # stream, so restarts and growth steps are reproducible in isolation.
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(block_index)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((rows, cols))


def _single_col(dense: np.ndarray, rows_per_block: int) -> BlockedMatrix:
    return blocks.from_dense(dense, BlockShape(rows_per_block, max(dense.shape[1], 1)))


def _wrap_small(dense: np.ndarray, rows_per_block: int) -> BlockedMatrix:
    # Small dense factor on the right of a blocked product; the row
    # blocking must match the left operand's column blocking.
    return blocks.from_dense(dense, BlockShape(rows_per_block, max(dense.shape[1], 1)))


def _append_columns(a: BlockedMatrix, b: BlockedMatrix) -> BlockedMatrix:
    """Column-append for single-block-column matrices with equal row blocking."""
    if a.global_rows != b.global_rows or a.block_shape.rows != b.block_shape.rows:
        raise ValueError("row blockings differ")
    cols = a.global_cols + b.global_cols
    merged = [[blocks._as_block(np.hstack([np.asarray(ra[0]), np.asarray(rb[0])]))]
              for ra, rb in zip(a.blocks, b.blocks)]
    return BlockedMatrix(a.global_rows, cols, BlockShape(a.block_shape.rows, cols), merged)


def projection_error(a: BlockedMatrix, q: BlockedMatrix, pool=None, norm_a: float | None = None) -> float:
    """Directly measured relative residual ``||A - Q Q^T A||_F / ||A||_F``."""
    if norm_a is None:
        norm_a = blocks.frobenius_norm(a)
    coeff = blocks.transpose_matmul(q, a, pool)
    recon = blocks.matmul(q, coeff, pool)
    return blocks.frobenius_norm(blocks.sub(a, recon)) / norm_a


def _truncate_count(sigma: np.ndarray, trunc: TruncationSpec) -> int:
    positive = int(np.sum(sigma > 0.0))
    if positive == 0:
        raise ValueError("matrix has no positive singular values")
    if trunc.mode == "fixed_rank":
        return min(trunc.rank, positive)
    total = float(np.sum(sigma**2))
    budget = trunc.epsilon**2 * total
    tail = 0.0
    keep = positive
    # walk the tail upward until the discarded energy would exceed the budget
    for i in range(positive - 1, 0, -1):
        tail += float(sigma[i] ** 2)
        if tail > budget:
            break
        keep = i
    return max(keep, 1)


def _flip_column_signs(m: BlockedMatrix) -> BlockedMatrix:
    """Scale each column by +-1 so its largest-magnitude entry is positive."""
    best_abs = np.full(m.global_cols, -1.0)
    best_val = np.zeros(m.global_cols)
    for row in m.blocks:
        offset = 0
        for blk in row:
            arr = np.asarray(blk)
            am = np.abs(arr)
            top = am.max(axis=0) if arr.shape[0] else np.zeros(arr.shape[1])
            cols = np.arange(offset, offset + arr.shape[1])
            better = top > best_abs[cols]
            if np.any(better):
                picked = arr[am.argmax(axis=0), np.arange(arr.shape[1])]
                best_val[cols[better]] = picked[better]
                best_abs[cols[better]] = top[better]
            offset += arr.shape[1]
    signs = np.where(best_val < 0.0, -1.0, 1.0)
    return blocks.scale_cols(m, signs)


def _merge_block_rows(a: BlockedMatrix) -> list[tuple[int, int]]:
    """Row ranges of local QR panels: consecutive block rows merged until
    each panel has at least as many rows as the matrix has columns."""
    rpb = a.block_shape.rows
    bounds = list(range(0, a.global_rows, rpb)) + [a.global_rows]
    panels = []
    lo = bounds[0]
    for hi in bounds[1:]:
        if hi - lo >= a.global_cols or hi == a.global_rows:
            panels.append((lo, hi))
            lo = hi
    if len(panels) > 1 and panels[-1][1] - panels[-1][0] < a.global_cols:
        last = panels.pop()
        panels[-1] = (panels[-1][0], last[1])
    return panels


def tsqr(a: BlockedMatrix, pool=None) -> tuple[BlockedMatrix, np.ndarray]:
    """Tall-skinny QR.

    Local QR factors are computed per merged block-row panel; the small
    triangular factors are then reduced pairwise (stacked vertically and
    refactored) until one R remains.  Q is recovered by pushing the small
    Q factors of the reduction tree back down to the panels.

    Returns ``(Q, R)`` with Q a BlockedMatrix sharing a's row blocking and
    R a plain ``(cols, cols)`` upper-triangular array.
    """
    n = a.global_cols
    if a.global_rows < n:
        raise ValueError(f"tsqr needs a tall matrix, got {a.shape}")
    panels = _merge_block_rows(a)
    locals_ = blocks._map_blocks(
        [(i, (a, lo, hi)) for i, (lo, hi) in enumerate(panels)],
        lambda m, lo, hi: np.linalg.qr(blocks._rows_dense(m, lo, hi), mode="reduced"),
        pool,
    )
    q_leaf = [locals_[i][0] for i in range(len(panels))]
    rs = [locals_[i][1] for i in range(len(panels))]

    # pairwise reduction; each level records the split Q of every merge
    levels = []
    while len(rs) > 1:
        level = []
        nxt = []
        for p in range(0, len(rs) - 1, 2):
            q, r = np.linalg.qr(np.vstack([rs[p], rs[p + 1]]), mode="reduced")
            level.append((q[:n], q[n:]))
            nxt.append(r)
        if len(rs) % 2:
            level.append(None)
            nxt.append(rs[-1])
        levels.append(level)
        rs = nxt
    r_final = rs[0]

    # back-propagate: w maps each panel's local Q onto the final columns
    ws = [np.eye(n)]
    for level in reversed(levels):
        down = []
        for entry, w in zip(level, ws):
            if entry is None:
                down.append(w)
            else:
                top, bot = entry
                down.append(top @ w)
                down.append(bot @ w)
        ws = down

    strips = blocks._map_blocks(
        [(i, (q_leaf[i], ws[i])) for i in range(len(panels))],
        lambda q, w: q @ w,
        pool,
    )

    def fetch(lo, hi):
        for i, (plo, phi) in enumerate(panels):
            if plo <= lo < phi:
                return strips[i][lo - plo : hi - plo]
        raise IndexError(lo)

    q_mat = blocks._from_row_source(a.global_rows, n, BlockShape(a.block_shape.rows, n), fetch)
    return q_mat, r_final


def _finish_basis(a, q, small_u, sigma, keep, trunc, pool, norm_a):
    vec = blocks.matmul(q, _wrap_small(small_u[:, :keep], q.block_shape.cols), pool)
    vec = _flip_column_signs(vec)
    err = projection_error(a, vec, pool, norm_a)
    return Basis(vec, np.array(sigma[:keep]), trunc, err)


def full_svd(a: BlockedMatrix, trunc: TruncationSpec, pool=None) -> Basis:
    """Left singular basis via TSQR and an exact SVD of its R factor.

    The panel reduction pays off only on clearly tall matrices; anything
    under a 2:1 aspect is factorized densely instead, with the same
    truncation and the same measured-error guarantee.
    """
    norm_a = blocks.frobenius_norm(a)
    if a.global_rows < 2 * a.global_cols:
        dense = blocks.to_dense(a)
        u, sigma, _ = np.linalg.svd(dense, full_matrices=False)
        keep = _truncate_count(sigma, trunc)

        def finish(k):
            vec = blocks.from_dense(u[:, :k], BlockShape(a.block_shape.rows, k))
            vec = _flip_column_signs(vec)
            err = projection_error(a, vec, pool, norm_a)
            return Basis(vec, np.array(sigma[:k]), trunc, err)

        basis = finish(keep)
        while (trunc.mode == "tolerance" and basis.achieved_error > trunc.epsilon
               and keep < int(np.sum(sigma > 0.0))):
            keep += 1
            basis = finish(keep)
        return basis
    q, r = tsqr(a, pool)
    u_r, sigma, _ = np.linalg.svd(r)
    keep = _truncate_count(sigma, trunc)
    basis = _finish_basis(a, q, u_r, sigma, keep, trunc, pool, norm_a)
    while (
        trunc.mode == "tolerance"
        and basis.achieved_error > trunc.epsilon
        and keep < int(np.sum(sigma > 0.0))
    ):
        # rounding pushed the measured residual past the bound: widen
        keep += 1
        basis = _finish_basis(a, q, u_r, sigma, keep, trunc, pool, norm_a)
    return basis


def randomized_svd(
    a: BlockedMatrix,
    trunc: TruncationSpec,
    oversampling: int = 8,
    power_iters: int = 2,
    seed: int = 0,
    pool=None,
) -> Basis:
    """Left singular basis from a Gaussian range sketch.

    In ``fixed_rank`` mode one sketch of ``rank + oversampling`` columns
    is drawn.  In ``tolerance`` mode the range grows in fixed 8-column
    blocks, each drawn from its own counter-keyed stream, until the
    exactly measured residual ``||A - Q Q^T A||_F`` drops under
    ``epsilon * ||A||_F``; regrowing therefore resumes from the previous
    convergence point rather than starting over.
    """
    norm_a = blocks.frobenius_norm(a)
    if norm_a == 0.0:
        raise ValueError("matrix has no positive singular values")
    inner = a.block_shape.cols
    small_dim = min(a.global_rows, a.global_cols)
    if trunc.mode == "fixed_rank" and trunc.rank > small_dim:
        raise ValueError(f"rank {trunc.rank} exceeds the smaller dimension {small_dim}")

    def sketch_block(width, block_index, q_prev):
        omega = _gaussian(a.global_cols, width, seed, block_index)
        y = blocks.matmul(a, _wrap_small(omega, inner), pool)
        for _ in range(power_iters):
            z = blocks.to_dense(blocks.transpose_matmul(a, y, pool))
            z, _ = np.linalg.qr(z, mode="reduced")
            y = blocks.matmul(a, _wrap_small(z, inner), pool)
        for _ in range(2 if q_prev is not None else 0):
            c = blocks.to_dense(blocks.transpose_matmul(q_prev, y, pool))
            y = blocks.sub(y, blocks.matmul(q_prev, _wrap_small(c, q_prev.block_shape.cols), pool))
        q_new, _ = tsqr(y, pool)
        return q_new

    if trunc.mode == "fixed_rank":
        q = sketch_block(min(trunc.rank + oversampling, small_dim), 0, None)
        range_err = None
    else:
        q = None
        range_err = np.inf
        block_index = 0
        while range_err > trunc.epsilon:
            if q is not None and q.global_cols >= small_dim:
                raise RuntimeError(
                    f"range sketch reached full width {small_dim} at residual {range_err:.3e}"
                )
            width = _GROWTH_BLOCK if q is None else min(_GROWTH_BLOCK, small_dim - q.global_cols)
            q_new = sketch_block(width, block_index, q)
            q = q_new if q is None else _append_columns(q, q_new)
            range_err = projection_error(a, q, pool, norm_a)
            block_index += 1

    b_small = blocks.to_dense(blocks.transpose_matmul(q, a, pool))
    u_b, sigma, _ = np.linalg.svd(b_small, full_matrices=False)
    if trunc.mode == "fixed_rank":
        keep = _truncate_count(sigma, trunc)
    else:
        # split the residual budget: range miss plus discarded tail
        budget = trunc.epsilon**2 * norm_a**2 - (range_err * norm_a) ** 2
        tails = np.concatenate([np.cumsum((sigma**2)[::-1])[::-1][1:], [0.0]])
        ok = np.nonzero(tails <= max(budget, 0.0))[0]
        keep = int(ok[0]) + 1 if ok.size else sigma.size
        keep = min(max(keep, 1), int(np.sum(sigma > 0.0)) or 1)
    basis = _finish_basis(a, q, u_b, sigma, keep, trunc, pool, norm_a)
    while (
        trunc.mode == "tolerance"
        and basis.achieved_error > trunc.epsilon
        and keep < int(np.sum(sigma > 0.0))
    ):
        keep += 1
        basis = _finish_basis(a, q, u_b, sigma, keep, trunc, pool, norm_a)
    return basis


def lanczos_svd(
    a: BlockedMatrix,
    params: LanczosParams,
    trunc: TruncationSpec,
    seed: int = 0,
    pool=None,
    cancel_check=None,
) -> Basis:
    """Left singular basis via restarted block Krylov iteration on A.T A.

    Every outer iteration expands the right subspace by one block of
    ``A.T (A v)`` directions, reorthogonalizes fully against all previous
    directions, and refines singular triplets by Rayleigh-Ritz.  The top
    ``params.nsv`` Ritz values are tracked between iterations; once their
    relative change drops below ``convergence_tol`` (and, in tolerance
    mode, the measured residual of the truncated basis meets the bound)
    the remaining planned iterations are skipped.  ``cancel_check`` is
    polled at iteration boundaries so a scheduler can stop the loop
    cooperatively.
    """
    n = a.global_cols
    if a.global_rows < n:
        raise ValueError(f"lanczos_svd needs a tall matrix, got {a.shape}")
    norm_a = blocks.frobenius_norm(a)
    if norm_a == 0.0:
        raise ValueError("matrix has no positive singular values")
    cap = min(params.k, n)
    width = min(params.block_cols, cap)
    inner = a.block_shape.cols

    v, _ = np.linalg.qr(_gaussian(n, width, seed, 0), mode="reduced")
    prev_sigma = None
    exhausted = False
    best: Basis | None = None
    last = None

    def snapshot_best() -> Basis | None:
        # freshest iterate for the non-convergence payload; built lazily
        # because _finish_basis costs a blocked pass
        if last is None:
            return best
        qm, u_r, sigma = last
        if trunc.mode == "fixed_rank":
            keep = _truncate_count(sigma, trunc)
        else:
            captured = np.cumsum(sigma**2)
            target = (1.0 - trunc.epsilon**2) * norm_a**2
            ok = np.nonzero(captured >= target)[0]
            keep = int(ok[0]) + 1 if ok.size else sigma.size
            keep = min(max(keep, 1), max(int(np.sum(sigma > 0.0)), 1))
        return _finish_basis(a, qm, u_r, sigma, keep, trunc, pool, norm_a)

    def reorthogonalize(w, basis_v):
        # the drop scale is taken before projection: a block that lies
        # entirely inside the current span must come back empty, not as
        # the normalized roundoff the QR of a zero block would produce
        scale = float(np.sqrt(np.max(np.einsum("ij,ij->j", w, w)))) if w.size else 0.0
        for _ in range(2):
            w = w - basis_v @ (basis_v.T @ w)
        q_w, r_w = np.linalg.qr(w, mode="reduced")
        d = np.abs(np.diag(r_w))
        keep = d > max(scale, 1e-300) * 1e-12
        return q_w[:, keep]

    for it in range(params.max_outer_iterations):
        if cancel_check is not None and cancel_check():
            raise LanczosNonConvergence(f"cancelled at outer iteration {it}", snapshot_best())

        av = blocks.matmul(a, _wrap_small(v, inner), pool)
        qm, rm = tsqr(av, pool)
        u_r, sigma, pt = np.linalg.svd(rm)
        last = (qm, u_r, sigma)

        m = min(params.nsv, sigma.size)
        settled = (
            prev_sigma is not None
            and prev_sigma.size >= m
            and np.all(
                np.abs(sigma[:m] - prev_sigma[:m]) <= params.convergence_tol * np.maximum(sigma[:m], 1e-300)
            )
        )
        prev_sigma = sigma.copy()

        if settled or exhausted:
            if trunc.mode == "fixed_rank":
                keep = _truncate_count(sigma, trunc)
                return _finish_basis(a, qm, u_r, sigma, keep, trunc, pool, norm_a)
            # tolerance mode: estimate the cut from the Ritz values, then
            # trust only the measured residual
            captured = np.cumsum(sigma**2)
            target = (1.0 - trunc.epsilon**2) * norm_a**2
            ok = np.nonzero(captured >= target)[0]
            keep = int(ok[0]) + 1 if ok.size else sigma.size
            positive = max(int(np.sum(sigma > 0.0)), 1)
            keep = min(max(keep, 1), positive)
            basis = _finish_basis(a, qm, u_r, sigma, keep, trunc, pool, norm_a)
            while basis.achieved_error > trunc.epsilon and keep < positive:
                keep += 1
                basis = _finish_basis(a, qm, u_r, sigma, keep, trunc, pool, norm_a)
            best = basis
            if basis.achieved_error <= trunc.epsilon:
                return basis
            if exhausted or cap >= n:
                raise LanczosNonConvergence(
                    f"subspace cap k={params.k} cannot reach tolerance {trunc.epsilon:g}; "
                    f"best residual {basis.achieved_error:.3e}",
                    best,
                )
            # fall through: grow the subspace further

        if v.shape[1] >= cap:
            # thick restart: keep the best `rank` Ritz directions
            v = v @ pt.T[:, : min(params.rank, v.shape[1])]
            v, _ = np.linalg.qr(v, mode="reduced")

        tail = v[:, -min(width, v.shape[1]) :]
        atail = blocks.matmul(a, _wrap_small(tail, inner), pool)
        w = blocks.to_dense(blocks.transpose_matmul(a, atail, pool))
        new = reorthogonalize(w, v)
        if new.shape[1] == 0:
            if v.shape[1] >= n:
                exhausted = True
                continue
            # Krylov breakdown: replenish with fresh deterministic directions
            new = reorthogonalize(_gaussian(n, width, seed, 1000 + it), v)
            if new.shape[1] == 0:
                exhausted = True
                continue
        v = np.hstack([v, new])

    raise LanczosNonConvergence(
        f"no convergence after {params.max_outer_iterations} outer iterations", snapshot_best()
    )


def save_basis(basis: Basis, directory, stem: str = "basis") -> None:
    """Persist vectors (BMX1) plus a JSON sidecar with the metadata."""
    os.makedirs(directory, exist_ok=True)
    blocks.save_bmx(basis.vectors, os.path.join(directory, f"{stem}.bmx"))
    meta = {
        "singular_values": [float(s) for s in basis.singular_values],
        "truncation_mode": basis.truncation.mode,
        "epsilon": basis.truncation.epsilon,
        "rank": basis.truncation.rank,
        "achieved_error": basis.achieved_error,
    }
    with open(os.path.join(directory, f"{stem}.meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_basis(directory, stem: str = "basis") -> Basis:
    vectors = blocks.load_bmx(os.path.join(directory, f"{stem}.bmx"))
    with open(os.path.join(directory, f"{stem}.meta.json")) as fh:
        meta = json.load(fh)
    if meta["truncation_mode"] == "tolerance":
        trunc = TruncationSpec.tolerance(meta["epsilon"])
    else:
        trunc = TruncationSpec.fixed_rank(meta["rank"])
    return Basis(vectors, np.array(meta["singular_values"]), trunc, float(meta["achieved_error"]))
