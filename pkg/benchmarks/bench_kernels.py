"""Time the element kernels: compiled extension vs numpy reference.

Runs the three backend entry points over a square mesh, full-mesh and a
rule-sized subset, and reports best-of-N wall times with the observed
agreement between backends.  Results are hardware-bound; the numbers are
for comparing the two implementations on one machine, not across hosts.

    python benchmarks/bench_kernels.py --mesh 96 --repeats 5 [--csv out.csv]
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from romflow.fem.kernels import get_impl
from romflow.fem.mesh import recirculating_velocity, unit_square_mesh


def best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_workloads(mesh_divisions: int):
    mesh = unit_square_mesh(mesh_divisions, mesh_divisions)
    rng = np.random.default_rng(20240816)
    t = rng.standard_normal(mesh.n_nodes)
    tp = rng.standard_normal(mesh.n_nodes)
    src = rng.standard_normal(mesh.n_nodes)
    vel = recirculating_velocity(mesh.nodes)
    all_el = np.arange(mesh.n_elements)
    subset = np.sort(rng.choice(mesh.n_elements, size=max(mesh.n_elements // 10, 1),
                                replace=False))
    dt, theta, nu, kappa = 0.5, 1.0, 0.05, 0.3

    def residuals(impl, idx):
        return impl.element_residuals(idx, mesh.elements, mesh.areas, mesh.grads,
                                      t, tp, vel, src, dt, theta, nu, kappa)

    def jacobians(impl, idx):
        return impl.element_jacobians(idx, mesh.elements, mesh.areas, mesh.grads,
                                      t, vel, dt, theta, nu, kappa)

    def assemble(impl, idx):
        return impl.assemble_residual(mesh.elements, mesh.areas, mesh.grads,
                                      t, tp, vel, src, dt, theta, nu, kappa,
                                      mesh.element_dof_map, mesh.n_dofs)

    return mesh, [
        (f"residuals, all {mesh.n_elements} elements", residuals, all_el),
        (f"residuals, {subset.size}-element rule", residuals, subset),
        (f"jacobians, all {mesh.n_elements} elements", jacobians, all_el),
        (f"jacobians, {subset.size}-element rule", jacobians, subset),
        ("global assembly", assemble, all_el),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mesh", type=int, default=96,
                        help="divisions per side (default 96, 18432 elements)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions, best is kept (default 5)")
    parser.add_argument("--csv", help="also write rows to this file")
    args = parser.parse_args(argv)

    python = get_impl("python")
    try:
        compiled = get_impl("compiled")
    except ImportError:
        compiled = None
        print("compiled extension not importable; timing the numpy backend only",
              file=sys.stderr)

    mesh, workloads = build_workloads(args.mesh)
    print(f"mesh {args.mesh}x{args.mesh}: {mesh.n_elements} elements, "
          f"{mesh.n_dofs} unknowns, best of {args.repeats}")
    header = f"{'workload':38s} {'python':>10s} {'compiled':>10s} {'speedup':>8s} {'max diff':>10s}"
    print(header)
    print("-" * len(header))

    rows = []
    for label, fn, idx in workloads:
        t_py = best_of(args.repeats, lambda: fn(python, idx))
        if compiled is None:
            print(f"{label:38s} {t_py * 1e3:9.2f}ms {'-':>10s} {'-':>8s} {'-':>10s}")
            rows.append({"workload": label, "python_s": t_py,
                         "compiled_s": "", "speedup": "", "max_diff": ""})
            continue
        t_c = best_of(args.repeats, lambda: fn(compiled, idx))
        diff = float(np.max(np.abs(fn(python, idx) - fn(compiled, idx))))
        print(f"{label:38s} {t_py * 1e3:9.2f}ms {t_c * 1e3:9.2f}ms "
              f"{t_py / t_c:7.1f}x {diff:10.2e}")
        rows.append({"workload": label, "python_s": t_py, "compiled_s": t_c,
                     "speedup": t_py / t_c, "max_diff": diff})

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
