"""Acceptance criteria for the reduction pipeline, one test per criterion.

Every expected number here is either recomputed independently with plain
dense numpy (integration totals, projection errors, oracle SVDs) or is a
structural property of the delivered artifacts (shapes, signs, counts,
byte-identical reruns).  Nothing is read back from the code under test
and then asserted against itself.

Each test prints its measured values, so ``pytest -v -s`` doubles as a
verification protocol.  The desk-scale run behind most criteria comes
from the shared session fixture in conftest and executes once.
"""

import json
import os
import time

import numpy as np
import pytest

from romflow import blocks
from romflow.blocks import BlockShape, from_dense, load_bmx, to_dense
from romflow.cubature import (PartitionPlan, ecm, element_mode_basis, load_rule,
                              partitioned_ecm)
from romflow.fem import ParamPoint, Phase
from romflow.fem.solver import solve_fom
from romflow.galerkin import HromModel, solve_hrom
from romflow.svd import (LanczosParams, TruncationSpec, full_svd, lanczos_svd,
                         load_basis, randomized_svd, tsqr)
from romflow.workflow import pipeline
from romflow.workflow.config import WorkflowConfig
from romflow.workflow.graph import TaskGraph, execute_graph

from conftest import make_problem


def brute_force_integration_error(s_r_dense: np.ndarray, rule) -> float:
    """Relative error of the rule against exact column totals.

    Straight dense recomputation: the integrands are the residual-mode
    columns plus a constant column whose total is the element count, the
    target is the sum over all rows, and the rule replaces that sum with
    a weighted sum over its selected rows.
    """
    ghat = np.hstack([s_r_dense, np.ones((s_r_dense.shape[0], 1))])
    target = ghat.sum(axis=0)
    approx = ghat[rule.elements].T @ rule.weights
    return float(np.linalg.norm(target - approx) / np.linalg.norm(target))


def test_criterion_01_svd_singular_values_match_dense_oracle():
    """Blocked SVD agrees with numpy's dense LAPACK SVD on a matrix zoo."""
    rng = np.random.default_rng(20240816)
    t0 = time.perf_counter()
    worst_sigma = 0.0
    worst_ortho = 0.0
    for trial in range(50):
        rows = int(rng.integers(40, 301))
        cols = int(rng.integers(2, min(41, rows + 1)))
        kind = trial % 3
        if kind == 0:
            dense = rng.standard_normal((rows, cols))
        elif kind == 1:
            rank = int(rng.integers(1, cols + 1))
            dense = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
        else:
            # graded spectrum spanning 16 decades
            u, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
            v, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
            sig = np.logspace(0, -16, cols)
            dense = (u * sig) @ v.T
        shape = BlockShape(int(rng.choice([17, 64, 128, 512])),
                           int(rng.choice([8, 16, 64])))
        basis = full_svd(from_dense(dense, shape), TruncationSpec.fixed_rank(cols))
        oracle = np.linalg.svd(dense, compute_uv=False)
        k = basis.n_modes
        worst_sigma = max(worst_sigma,
                          float(np.max(np.abs(basis.singular_values - oracle[:k])) / oracle[0]))
        phi = to_dense(basis.vectors)
        worst_ortho = max(worst_ortho,
                          float(np.linalg.norm(phi.T @ phi - np.eye(k))))
    wall = time.perf_counter() - t0
    print(f"criterion 1: 50 matrices, max sigma deviation {worst_sigma:.3e}, "
          f"max orthonormality defect {worst_ortho:.3e}, {wall:.1f}s")
    assert worst_sigma <= 1e-10
    assert worst_ortho <= 1e-10
    assert wall < 30.0


def test_criterion_02_every_algorithm_meets_every_tolerance(desk_run):
    """Each factorization in tolerance mode obeys its own truncation bound.

    The bound is measured directly as norm(S - Phi Phi^T S) over norm(S),
    both computed densely here.
    """
    snaps = load_bmx(desk_run["paths"].snapshots)
    dense = to_dense(snaps)
    norm_s = np.linalg.norm(dense)
    t0 = time.perf_counter()
    modes_seen = {}
    for eps in (1e-2, 1e-4, 1e-6):
        spec = TruncationSpec.tolerance(eps)
        candidates = {
            "tsqr": full_svd(snaps, spec),
            "randomized": randomized_svd(snaps, spec, oversampling=8,
                                         power_iters=2, seed=2024),
            "lanczos": lanczos_svd(snaps, LanczosParams(k=60, rank=40, nsv=20,
                                                        block_cols=8),
                                   spec, seed=2024),
        }
        for name, basis in candidates.items():
            phi = to_dense(basis.vectors)
            measured = np.linalg.norm(dense - phi @ (phi.T @ dense)) / norm_s
            print(f"criterion 2: eps {eps:.0e} {name:10s} modes {basis.n_modes:3d} "
                  f"measured {measured:.3e}")
            assert measured <= eps, (name, eps, measured)
            modes_seen.setdefault(name, []).append(basis.n_modes)
    wall = time.perf_counter() - t0
    print(f"criterion 2: {wall:.1f}s")
    for name, counts in modes_seen.items():
        # tighter tolerance can only ask for more modes
        assert counts == sorted(counts), (name, counts)
    assert wall < 60.0


def test_criterion_03_tsqr_factors_invariant_across_blockings():
    """The R factor (and sign-fixed Q) does not depend on the row split."""
    rng = np.random.default_rng(20240816)
    dense = rng.standard_normal((256, 16))

    def normalized(rows_per_block):
        q, r = tsqr(from_dense(dense, BlockShape(rows_per_block, 16)))
        flip = np.sign(np.diag(r))
        flip[flip == 0] = 1.0
        return to_dense(q) * flip, flip[:, None] * r

    q_ref, r_ref = normalized(256)          # single block
    scale = np.max(np.abs(r_ref))
    worst = 0.0
    for rows_per_block in (128, 64, 32):    # 2, 4, 8 block rows
        q, r = normalized(rows_per_block)
        worst = max(worst, float(np.max(np.abs(r - r_ref)) / scale))
        worst = max(worst, float(np.max(np.abs(q - q_ref))))
    print(f"criterion 3: max deviation across 1/2/4/8 block rows {worst:.3e}")
    assert worst <= 1e-12


def test_criterion_04_desk_rule_is_small_positive_and_exact(desk_run):
    """The fitted desk rule integrates the residual modes to near machine level."""
    t0 = time.perf_counter()
    rule = load_rule(desk_run["paths"].rule)
    cost = json.loads(desk_run["paths"].cubature_cost.read_text())
    rank = cost["levels"][0]["partitions"][0]["rank"]
    s_r = to_dense(load_bmx(desk_run["paths"].residuals))
    err = brute_force_integration_error(s_r, rule)
    wall = time.perf_counter() - t0
    print(f"criterion 4: rule {rule.n_elements}/{s_r.shape[0]} elements, "
          f"mode rank {rank}, brute-force error {err:.3e}, {wall:.1f}s")
    assert np.all(rule.weights > 0.0)
    assert rule.n_elements <= 2 * (rank + 1)
    assert err <= 1e-8
    assert wall < 30.0


def test_criterion_05_partitioned_fit_matches_original_totals(desk_run):
    """Partitioned fitting stays exact against the unpartitioned totals.

    Three parts: a synthetic rank-6 problem over four partitions, the
    desk residual matrix over four partitions, and the degenerate single
    all-covering partition, which must reproduce the monolithic rule bit
    for bit.
    """
    rng = np.random.default_rng(20240816)
    synth = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 40))
    synth_blocked = from_dense(synth, BlockShape(64, 16))

    rule_s, report_s = partitioned_ecm(synth_blocked,
                                       PartitionPlan.contiguous(200, 50, 2),
                                       eps_res=1e-8)
    err_s = brute_force_integration_error(synth, rule_s)
    print(f"criterion 5: synthetic rule {rule_s.n_elements}/200, "
          f"{len(report_s.levels)} levels, error {err_s:.3e}")
    assert len(report_s.levels) <= 3
    assert np.all(rule_s.weights > 0.0)
    assert err_s <= 1e-8

    s_r_blocked = load_bmx(desk_run["paths"].residuals)
    s_r = to_dense(s_r_blocked)
    n_el = s_r.shape[0]
    t0 = time.perf_counter()
    rule_d, report_d = partitioned_ecm(s_r_blocked,
                                       PartitionPlan.contiguous(n_el, n_el // 4, 2),
                                       eps_res=1e-8)
    err_d = brute_force_integration_error(s_r, rule_d)
    print(f"criterion 5: desk rule {rule_d.n_elements}/{n_el}, "
          f"{len(report_d.levels)} levels, error {err_d:.3e}, "
          f"{time.perf_counter() - t0:.1f}s")
    assert len(report_d.levels) <= 3
    assert np.all(rule_d.weights > 0.0)
    assert err_d <= 1e-8

    # one partition covering every row degenerates to the monolithic fit
    single, _ = partitioned_ecm(synth_blocked,
                                PartitionPlan(200, 2, ((0, 200),)), eps_res=1e-8)
    modes, _ = element_mode_basis(synth_blocked, TruncationSpec.tolerance(1e-8))
    mono, _ = ecm(modes, 1e-8)
    assert np.array_equal(single.elements, mono.elements)
    assert np.array_equal(single.weights, mono.weights)
    print(f"criterion 5: single partition == monolithic "
          f"({single.n_elements} elements, weights bitwise equal)")


def test_criterion_06_desk_pipeline_passes_both_verifications(desk_run):
    """FOM-vs-ROM and ROM-vs-HROM gates hold end to end at desk scale."""
    rep = desk_run["report"]
    check = pipeline.verify(desk_run["config"])
    print(f"criterion 6: {rep.n_params} trajectories x {rep.time_steps} steps, "
          f"{rep.n_modes} modes, rule {rep.rule_elements}/{rep.n_elements}")
    print(f"criterion 6: verification 1 {rep.v1:.3e} (gate {rep.gate_solution:.0e}), "
          f"verification 2 {rep.v2:.3e} (gate {rep.gate_hrom:.0e}), "
          f"wall {desk_run['seconds']:.1f}s")
    assert rep.v1 <= 1e-4
    assert rep.v2 <= 1e-4
    assert rep.v1_pass and rep.v2_pass
    assert check.matches_report and check.ok
    assert desk_run["seconds"] < 600.0


def test_criterion_07_reduced_operator_shape_and_assembly_ratio(desk_run):
    """HROM assembles an n_modes-square system over >=10x fewer elements."""
    rep = desk_run["report"]
    ratio = rep.n_elements / rep.rule_elements
    config = desk_run["config"]
    basis = load_basis(desk_run["paths"].basis_dir)
    rule = load_rule(desk_run["paths"].rule)
    model = HromModel(config.problem(), basis, rule)
    result = solve_hrom(model, config.training[0])
    n = basis.n_modes
    print(f"criterion 7: assembly ratio {ratio:.1f} "
          f"({rep.n_elements}/{rep.rule_elements}), reduced system {n}x{n} "
          f"vs full {rep.n_dofs}x{rep.n_dofs}")
    assert ratio >= 10.0
    assert result.reduced_states.shape[0] == n == rep.n_modes
    assert result.elements_per_assembly == rule.n_elements
    assert n < rep.n_dofs


MID_TRAINING = (ParamPoint(0.8, 0.7), ParamPoint(1.3, 1.1),
                ParamPoint(1.9, 1.6), ParamPoint(1.1, 1.9))


def test_criterion_08_report_numbers_identical_across_worker_counts(tmp_path):
    """Worker count changes scheduling only, never a reported number."""
    reports, roots = {}, {}
    for workers in (1, 2, 4):
        config = WorkflowConfig(
            mesh_divisions=16, heating_steps=3, cooling_steps=2, dt=0.25,
            training=MID_TRAINING, out_dir=str(tmp_path / f"w{workers}"),
            workers=workers,
        )
        reports[workers], _ = pipeline.run_workflow(config)
        roots[workers] = pipeline.run_paths(config).root
    import dataclasses
    base = reports[1]
    timing = {"fom_seconds", "rom_seconds", "hrom_seconds"}
    for workers in (2, 4):
        for f in dataclasses.fields(base):
            if f.name in timing or f.name == "workers":
                continue
            assert getattr(base, f.name) == getattr(reports[workers], f.name), f.name
    for name in ("stage1/snapshots.bmx", "stage2/basis.bmx",
                 "stage3/residuals.bmx", "stage4/rule.txt",
                 "stage5/hrom_snapshots.bmx"):
        ref = (roots[1] / name).read_bytes()
        assert all((roots[w] / name).read_bytes() == ref for w in (2, 4)), name
    print(f"criterion 8: v1 {base.v1:.17g}, v2 {base.v2:.17g}, rule "
          f"{base.rule_elements} identical for workers 1/2/4, artifacts bitwise equal")


def test_criterion_09_four_workers_halve_independent_solve_makespan():
    """Eight independent full-order solves finish in under half the serial time.

    A wall-clock speedup of CPU-bound work needs at least two cores.  On a
    single-core host the test still demonstrates, and asserts, that the
    executor overlaps blocking tasks, then reports the environment limit
    as a skip rather than faking a measurement.
    """
    cpus = os.cpu_count() or 1

    def run_graph(fns, workers):
        graph = TaskGraph()
        for i, fn in enumerate(fns):
            graph.add(f"t{i}", fn)
        t0 = time.perf_counter()
        run = execute_graph(graph, workers=workers)
        assert run.ok
        return time.perf_counter() - t0

    if cpus < 2:
        sleepers = [lambda results, cancel: time.sleep(0.08) for _ in range(8)]
        serial = run_graph(sleepers, workers=1)
        overlapped = run_graph(sleepers, workers=4)
        assert overlapped < 0.5 * serial
        pytest.skip(
            f"needs >=2 cpus, found {cpus}: executor overlap verified on "
            f"blocking tasks (8x0.08s: {overlapped:.2f}s at 4 workers vs "
            f"{serial:.2f}s serial), but a compute speedup cannot manifest "
            f"on one core"
        )

    problem = make_problem(nx=16, time_steps=4)

    def make_solve(q_dot):
        def fn(results, cancel):
            return solve_fom(problem, ParamPoint(q_dot, 1.0))
        return fn

    solves = [make_solve(0.5 + 0.1 * i) for i in range(8)]
    serial = run_graph(solves, workers=1)
    parallel = run_graph(solves, workers=4)
    print(f"criterion 9: 8 solves, serial {serial:.2f}s, "
          f"4 workers {parallel:.2f}s, ratio {parallel / serial:.2f}")
    assert parallel < 0.5 * serial


def test_criterion_10_extrapolation_and_start_stop_schedule(desk_run):
    """The persisted model extrapolates +10% in both parameters and
    tracks repeated heat/cool cycles it was never trained on."""
    config = desk_run["config"]
    q_max = max(p.q_dot for p in config.training)
    v_max = max(p.vel_scale for p in config.training)
    mu = ParamPoint(1.1 * q_max, 1.1 * v_max)

    out = pipeline.evaluate_hrom(config, mu, compare_fom=True)
    print(f"criterion 10: mu ({mu.q_dot:.2f}, {mu.vel_scale:.2f}) "
          f"error vs fresh full-order solve {out['relative_error']:.3e}")
    assert out["relative_error"] <= 1e-2

    cycles = [Phase(8, True), Phase(8, False), Phase(8, True), Phase(8, False)]
    trace = np.asarray(pipeline.evaluate_hrom(config, mu, schedule=cycles)
                       ["mean_temperature"])
    phases = trace.reshape(4, 8)
    ends = ", ".join(f"{p[-1]:.3f}" for p in phases)
    print(f"criterion 10: phase-end mean temperatures {ends}")
    for i, phase in enumerate(phases):
        if i % 2 == 0:
            assert phase[-1] > phase[0], f"phase {i} should heat up"
        else:
            assert phase[-1] < phase[0], f"phase {i} should cool down"
    # cooling returns near the cold start before the second cycle
    assert phases[1][-1] < 0.2 * phases[0][-1]
