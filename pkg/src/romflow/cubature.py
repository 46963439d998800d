"""Reduced integration rules fitted to elemental residual snapshots.

A rule is a small set of elements with positive weights whose weighted
sums reproduce, to a tolerance, the integrals that the full element set
produces for every column of a mode matrix.  Rules are grown greedily,
reweighted by nonnegative least squares at every step, and optionally
fitted hierarchically: partition the elements, fit a local rule per
partition, keep only the selected elements, repeat, and finish with one
monolithic fit over the survivors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import blocks
from .blocks import BlockedMatrix, BlockShape
from .svd import Basis, TruncationSpec, full_svd


@dataclass(frozen=True)
class CubatureRule:
    """Elements (ascending) and positive weights of a reduced rule."""

    elements: np.ndarray
    weights: np.ndarray
    achieved_error: float
    tolerance: float

    def __post_init__(self):
        elements = np.asarray(self.elements, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if elements.ndim != 1 or weights.shape != elements.shape:
            raise ValueError("elements and weights must be 1-D and of equal length")
        if elements.size and np.any(np.diff(elements) <= 0):
            raise ValueError("elements must be strictly ascending")
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "weights", weights)

    @property
    def n_elements(self) -> int:
        return int(self.elements.size)


class CubatureToleranceError(RuntimeError):
    """Greedy fit stalled above the requested tolerance.

    Carries the best rule reached so the caller can inspect or accept it.
    """

    def __init__(self, message: str, best: CubatureRule, iterations: int = 0):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


def _as_modes(g) -> np.ndarray:
    g = blocks.to_dense(g) if isinstance(g, BlockedMatrix) else np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        raise ValueError("mode matrix must be 2-D and nonempty")
    if not np.all(np.isfinite(g)):
        raise ValueError("mode matrix has non-finite entries")
    return g


def ecm(g, tol: float, initial_weights=None) -> tuple[CubatureRule, int]:
    """Fit one rule to the rows of g (one row per candidate element).

    The target vector is the column sums under ``initial_weights`` (ones
    by default), with an appended volume column that preserves the total
    weight.  Each iteration adds the candidate whose row best aligns with
    the residual, re-solves the weights with nonnegative least squares,
    and drops candidates whose weight falls to zero.  Ties take the
    lowest element index.  Returns the rule and the iteration count.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    g = _as_modes(g)
    n_el = g.shape[0]
    ghat = np.hstack([g, np.ones((n_el, 1))])
    if initial_weights is None:
        w0 = np.ones(n_el)
    else:
        w0 = np.asarray(initial_weights, dtype=np.float64)
        if w0.shape != (n_el,):
            raise ValueError("initial_weights length must match the candidate count")
        if np.any(w0 < 0) or not np.all(np.isfinite(w0)) or w0.sum() <= 0:
            raise ValueError("initial_weights must be nonnegative with positive sum")
    b = ghat.T @ w0
    norm_b = float(np.linalg.norm(b))
    # scoring uses the mode rows only: the volume column would otherwise
    # steer the greedy toward elements with no mode content at all.
    # Rows of candidates with no content must be exactly zero; a rule
    # that parks the volume weight on a roundoff-sized row satisfies
    # the target while integrating nothing
    mode_norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    live = mode_norms > 0.0
    if not np.any(live):
        raise ValueError("every candidate has an empty mode row")

    def finish(sel, w):
        order = np.argsort(np.asarray(sel, dtype=np.int64))
        elements = np.asarray(sel, dtype=np.int64)[order]
        weights = np.asarray(w, dtype=np.float64)[order]
        if elements.size:
            achieved = float(np.linalg.norm(b - ghat[elements].T @ weights)) / norm_b
        else:
            achieved = 1.0
        return CubatureRule(elements, weights, achieved, tol)

    sel: list[int] = []
    weights = np.zeros(0)
    resid = b.copy()
    err = 1.0
    best_err, best_sel, best_w = err, [], weights
    max_iter = min(3 * n_el, max(100, 12 * ghat.shape[1]))
    n_iter = 0
    n_live = int(np.count_nonzero(live))
    full_norms = np.sqrt(mode_norms * mode_norms + 1.0)

    def pick(scores: np.ndarray) -> int:
        s = np.where(live, scores, -np.inf)
        if sel:
            s[np.asarray(sel, dtype=np.int64)] = -np.inf
        return int(np.argmax(s))

    use_bvls = False

    def refit(trial: list[int]) -> tuple[np.ndarray, np.ndarray, float]:
        a = ghat[np.asarray(trial, dtype=np.int64)].T
        if use_bvls:
            w_new = scipy.optimize.lsq_linear(a, b, bounds=(0.0, np.inf), method="bvls").x
        else:
            w_new, _ = scipy.optimize.nnls(a, b)
        r = b - a @ w_new
        return w_new, r, float(np.linalg.norm(r)) / norm_b

    while err > tol:
        if n_iter >= max_iter or len(sel) == n_live:
            raise CubatureToleranceError(
                f"stopped at error {best_err:.3e} > tol {tol:.3e} after {n_iter} iterations",
                finish(best_sel, best_w), n_iter,
            )
        trial = sel + [pick((g @ resid[:-1]) / np.where(live, mode_norms, 1.0))]
        w_new, r_new, new_err = refit(trial)
        if new_err >= err * (1.0 - 1e-12) and not use_bvls:
            # nnls works on the normal equations, so its precision floor is
            # machine eps times the squared condition number; bounded-variable
            # least squares factors the original system and digs past that
            use_bvls = True
            w_new, r_new, new_err = refit(trial)
        if new_err >= err * (1.0 - 1e-12):
            # the mode-guided pick added nothing: take the steepest descent
            # over full rows instead; a nonpositive correlation there means
            # the live candidate set is already at its optimum
            j = pick((ghat @ resid) / full_norms)
            if j != trial[-1] and float(ghat[j] @ resid) > 0.0:
                trial[-1] = j
                w_new, r_new, new_err = refit(trial)
            if new_err >= err * (1.0 - 1e-12):
                raise CubatureToleranceError(
                    f"no descent direction at error {best_err:.3e} > tol {tol:.3e}",
                    finish(best_sel, best_w), n_iter,
                )
        keep = w_new > 0.0
        sel = [s for s, k in zip(trial, keep) if k]
        weights = w_new[keep]
        resid = r_new
        err = new_err
        n_iter += 1
        if err < best_err:
            best_err, best_sel, best_w = err, list(sel), weights.copy()
    return finish(sel, weights), n_iter


def integration_error(g, rule: CubatureRule, reference_weights=None) -> float:
    """Relative mismatch between the rule's sums and the reference sums.

    Columns of g are the integrands; the reference applies
    ``reference_weights`` (ones by default) to every row, the rule
    applies its weights to its elements only.  The volume column is
    included, so this reproduces the error the fit reports.
    """
    if isinstance(g, BlockedMatrix):
        n_el = g.global_rows
        wref = np.ones(n_el) if reference_weights is None else np.asarray(reference_weights, dtype=np.float64)
        ref = blocks.from_dense(wref[:, None], BlockShape(g.block_shape.rows, 1))
        b_modes = blocks.to_dense(blocks.transpose_matmul(g, ref))[:, 0]
        b = np.concatenate([b_modes, [wref.sum()]])
        rows = blocks.to_dense(blocks.select_rows(g, rule.elements))
    else:
        g = _as_modes(g)
        n_el = g.shape[0]
        wref = np.ones(n_el) if reference_weights is None else np.asarray(reference_weights, dtype=np.float64)
        ghat = np.hstack([g, np.ones((n_el, 1))])
        b = ghat.T @ wref
        rows = g[rule.elements]
    lhs = np.hstack([rows, np.ones((rows.shape[0], 1))]).T @ rule.weights
    return float(np.linalg.norm(b - lhs)) / float(np.linalg.norm(b))


def element_mode_basis(s, trunc: TruncationSpec, svd_fn=None, pool=None) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal column modes spanning the rows' variation.

    For wide matrices (more columns than rows, the common shape here)
    the factorization runs on the transpose and the left modes are
    recovered by back-multiplication.
    """
    if svd_fn is None:
        svd_fn = lambda m, t, p: full_svd(m, t, pool=p)
    if s.global_cols <= s.global_rows:
        basis = svd_fn(s, trunc, pool)
        u = blocks.to_dense(basis.vectors)
        # rows that are exactly zero in the source (elements with no
        # content under any training condition) must stay exactly zero
        # in the modes: the factorization smears roundoff into them, and
        # the greedy fit treats any nonzero row as a live candidate.
        # The wide branch below gets this for free from back-multiplying
        dense = blocks.to_dense(s)
        u[np.einsum("ij,ij->i", dense, dense) == 0.0] = 0.0
        return u, basis.singular_values
    basis = svd_fn(blocks.transpose(s), trunc, pool)
    v = blocks.to_dense(basis.vectors)
    sigma = basis.singular_values
    keep = sigma > sigma[0] * 1e-13
    v, sigma = v[:, keep], sigma[keep]
    sv = blocks.to_dense(blocks.matmul(s, blocks.from_dense(v, BlockShape(s.block_shape.cols, max(1, v.shape[1]))), pool=pool))
    return sv / sigma[None, :], sigma


def local_to_global(local_indices: np.ndarray, partition_range: tuple[int, int]) -> np.ndarray:
    """Map partition-local element indices to global ones."""
    lo, hi = partition_range
    local_indices = np.asarray(local_indices, dtype=np.int64)
    if local_indices.size and (local_indices.min() < 0 or local_indices.max() >= hi - lo):
        raise ValueError("local index outside the partition")
    return local_indices + lo


@dataclass(frozen=True)
class PartitionPlan:
    """Contiguous row partitions and the recursion budget of a hierarchical fit."""

    partition_size: int
    n_recursions: int
    partitions: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.partition_size < 1 or self.n_recursions < 0:
            raise ValueError("partition_size must be >= 1 and n_recursions >= 0")
        prev = 0
        for lo, hi in self.partitions:
            if lo != prev or hi <= lo:
                raise ValueError("partitions must be contiguous, ascending and nonempty")
            prev = hi

    @classmethod
    def contiguous(cls, n_rows: int, partition_size: int, n_recursions: int) -> "PartitionPlan":
        if n_rows < 1:
            raise ValueError("need at least one row")
        cuts = list(range(0, n_rows, partition_size)) + [n_rows]
        parts = tuple((cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1))
        return cls(partition_size, n_recursions, parts)


@dataclass(frozen=True)
class PartitionCost:
    rows: int
    cols: int
    rank: int
    svd_cost: int       # rows * cols * rank
    ecm_iterations: int
    ecm_cost: int       # iterations * (rank + 1) * rows
    selected: int


@dataclass(frozen=True)
class LevelCost:
    level: int
    partitions: tuple[PartitionCost, ...]
    survivors: int

    @property
    def svd_cost(self) -> int:
        return sum(p.svd_cost for p in self.partitions)

    @property
    def ecm_cost(self) -> int:
        return sum(p.ecm_cost for p in self.partitions)


@dataclass
class EcmCostReport:
    levels: list[LevelCost] = field(default_factory=list)

    @property
    def total_svd_cost(self) -> int:
        return sum(lv.svd_cost for lv in self.levels)

    @property
    def total_ecm_cost(self) -> int:
        return sum(lv.ecm_cost for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "total_svd_cost": self.total_svd_cost,
            "total_ecm_cost": self.total_ecm_cost,
            "levels": [
                {
                    "level": lv.level,
                    "survivors": lv.survivors,
                    "svd_cost": lv.svd_cost,
                    "ecm_cost": lv.ecm_cost,
                    "partitions": [vars(p) for p in lv.partitions],
                }
                for lv in self.levels
            ],
        }


def _weight_mode_column(g: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Append the prior weights as one more integrand to a mode matrix.

    A fit over weighted rows preserves candidate count through its volume
    column but not the running total weight; integrating the weight
    vector itself keeps that total, so folded weights stay consistent
    across recursion levels.  Uniform weights already equal the volume
    column and need nothing.
    """
    if np.all(weights == weights[0]):
        return g
    return np.hstack([g, (weights / np.linalg.norm(weights))[:, None]])


def _fit_partition(rows: np.ndarray, weights: np.ndarray, trunc: TruncationSpec,
                   ecm_tol: float, block_shape: BlockShape, pool) -> tuple[np.ndarray, np.ndarray, PartitionCost]:
    """One local fit: weighted modes, rule on the candidates, fold weights."""
    weighted = rows * weights[:, None]
    s_local = blocks.from_dense(weighted, BlockShape(min(block_shape.rows, rows.shape[0]),
                                                     min(block_shape.cols, rows.shape[1])))
    g, _sigma = element_mode_basis(s_local, trunc, pool=pool)
    try:
        rule, n_iter = ecm(_weight_mode_column(g, weights), ecm_tol)
    except CubatureToleranceError as exc:
        rule, n_iter = exc.best, exc.iterations
        if rule.n_elements == 0:
            raise
    cost = PartitionCost(
        rows=rows.shape[0], cols=rows.shape[1], rank=g.shape[1],
        svd_cost=rows.shape[0] * rows.shape[1] * g.shape[1],
        ecm_iterations=n_iter,
        ecm_cost=n_iter * (g.shape[1] + 1) * rows.shape[0],
        selected=rule.n_elements,
    )
    return rule.elements, rule.weights * weights[rule.elements], cost


def partitioned_ecm(s_r, plan: PartitionPlan, eps_res: float = 1e-8,
                    svd_fn=None, pool=None) -> tuple[CubatureRule, EcmCostReport]:
    """Hierarchical rule fit over a (possibly large) residual matrix.

    Level by level: fit a local rule per partition of the surviving
    candidates (rows weighted by the weights folded so far), keep the
    selected candidates, re-partition, and repeat while the survivor set
    still exceeds ``partition_size`` and recursions remain.  A final
    monolithic fit over the survivors produces the returned rule, whose
    error is measured against the original (unit-weight) totals.

    Local fits run at a tolerance tighter than the target so that their
    truncation drift cannot push the final fit out of budget.
    """
    if eps_res <= 0:
        raise ValueError("eps_res must be positive")
    n_el = s_r.global_rows
    if plan.partitions and plan.partitions[-1][1] != n_el:
        raise ValueError(f"plan covers {plan.partitions[-1][1]} rows, matrix has {n_el}")
    report = EcmCostReport()
    trunc = TruncationSpec.tolerance(eps_res)
    level_tol = eps_res / 10.0

    candidates = np.arange(n_el, dtype=np.int64)
    folded = np.ones(n_el)
    dense = blocks.to_dense(s_r)

    if len(plan.partitions) > 1 and n_el > plan.partition_size:
        parts = list(plan.partitions)
        level = 0
        while level < plan.n_recursions:
            level += 1
            next_candidates = []
            next_weights = []
            costs = []
            for lo, hi in parts:
                local_sel, local_w, cost = _fit_partition(
                    dense[candidates[lo:hi]], folded[lo:hi], trunc, level_tol,
                    s_r.block_shape, pool,
                )
                next_candidates.append(candidates[lo:hi][local_sel])
                next_weights.append(local_w)
                costs.append(cost)
            survivors = np.concatenate(next_candidates)
            report.levels.append(LevelCost(level, tuple(costs), int(survivors.size)))
            if survivors.size >= candidates.size:
                candidates, folded = survivors, np.concatenate(next_weights)
                break
            candidates, folded = survivors, np.concatenate(next_weights)
            if candidates.size <= plan.partition_size:
                break
            cuts = list(range(0, candidates.size, plan.partition_size)) + [candidates.size]
            parts = [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]

    # monolithic pass over the survivors, checked against the original totals
    weighted = dense[candidates] * folded[:, None]
    s_final = blocks.from_dense(weighted, BlockShape(min(s_r.block_shape.rows, weighted.shape[0]),
                                                     min(s_r.block_shape.cols, weighted.shape[1])))
    g, _sigma = element_mode_basis(s_final, trunc, svd_fn=svd_fn, pool=pool)
    final_tol = eps_res if candidates.size == n_el else level_tol
    rule_local, n_iter = ecm(_weight_mode_column(g, folded), final_tol)
    elements = candidates[rule_local.elements]
    weights = rule_local.weights * folded[rule_local.elements]
    order = np.argsort(elements)
    elements, weights = elements[order], weights[order]
    report.levels.append(LevelCost(
        len(report.levels) + 1,
        (PartitionCost(weighted.shape[0], weighted.shape[1], g.shape[1],
                       weighted.shape[0] * weighted.shape[1] * g.shape[1],
                       n_iter, n_iter * (g.shape[1] + 1) * weighted.shape[0],
                       int(elements.size)),),
        int(elements.size),
    ))
    probe = CubatureRule(elements, weights, 0.0, eps_res)
    achieved = integration_error(s_r, probe)
    rule = CubatureRule(elements, weights, achieved, eps_res)
    if achieved > eps_res:
        raise CubatureToleranceError(
            f"hierarchical fit achieved {achieved:.3e} > eps {eps_res:.3e}", rule)
    return rule, report


def save_rule(path, rule: CubatureRule) -> None:
    """Text format: a json header line, then one 'element weight' row per entry."""
    header = json.dumps({
        "count": rule.n_elements,
        "achieved_error": rule.achieved_error,
        "tolerance": rule.tolerance,
    })
    lines = [header]
    lines += [f"{int(e)} {w:.17g}" for e, w in zip(rule.elements, rule.weights)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_rule(path) -> CubatureRule:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty rule file")
    header = json.loads(lines[0])
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != int(header["count"]):
        raise ValueError(f"{path}: header count {header['count']} != {len(rows)} rows")
    elements = np.array([int(r[0]) for r in rows], dtype=np.int64)
    weights = np.array([float(r[1]) for r in rows], dtype=np.float64)
    return CubatureRule(elements, weights, float(header["achieved_error"]),
                        float(header["tolerance"]))
