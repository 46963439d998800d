"""Command-line front end.

Exit codes: 0 on success, 2 when a verification gate fails, 1 on any
other error.  Worker-count precedence: ``--workers`` flag, then the
ROMFLOW_WORKERS environment variable, then the config value.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

from ..fem import ParamPoint, Phase
from . import pipeline
from .config import load_config


def _resolve_workers(args, config) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get("ROMFLOW_WORKERS", "").strip()
    if env:
        workers = int(env)
        if workers < 1:
            raise ValueError("ROMFLOW_WORKERS must be at least 1")
        return workers
    return config.workers


def _load(args):
    config = load_config(args.config)
    if getattr(args, "out", None):
        config = dataclasses.replace(config, out_dir=args.out)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, svd=dataclasses.replace(config.svd, seed=args.seed))
    return config


def _add_common(p, seed=True):
    p.add_argument("-c", "--config", required=True, help="pipeline config (yaml)")
    p.add_argument("--workers", type=int, default=None, help="thread count override")
    p.add_argument("--out", default=None, help="output directory override")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="randomized factorization seed")


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; code 2 is reserved for verification gate failures
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="romflow",
                     description="snapshot / basis / cubature pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="all five stages plus report"))
    _add_common(sub.add_parser("stage1", help="full-order snapshots"), seed=False)
    _add_common(sub.add_parser("stage2", help="truncated basis"))
    _add_common(sub.add_parser("stage3", help="reduced solves and projected residuals"), seed=False)
    _add_common(sub.add_parser("stage4", help="reduced integration rule"), seed=False)
    _add_common(sub.add_parser("stage5", help="hyper-reduced solves"), seed=False)
    _add_common(sub.add_parser("verify", help="recompute both verifications from artifacts"),
                seed=False)

    ev = sub.add_parser("evaluate", help="hyper-reduced run at one parameter point")
    _add_common(ev, seed=False)
    ev.add_argument("--q-dot", type=float, required=True)
    ev.add_argument("--vel-scale", type=float, required=True)
    ev.add_argument("--csv", default=None, help="mean-temperature trace output")
    ev.add_argument("--compare-fom", action="store_true",
                    help="also run the full model and report the relative error")
    ev.add_argument("--schedule", default=None,
                    help="phase list like '8:on,8:off' overriding the trained heat/cool cycle")

    bench = sub.add_parser("bench-svd", help="strong-scaling timings of the factorizations")
    bench.add_argument("--rows", type=int, default=4096)
    bench.add_argument("--cols", type=int, default=192)
    bench.add_argument("--rank", type=int, default=24)
    bench.add_argument("--workers-list", default="1,2,4")
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--csv", default=None, help="write timings here as csv")
    return parser


def _cmd_run(args) -> int:
    config = _load(args)
    workers = _resolve_workers(args, config)
    report, run = pipeline.run_workflow(config, workers=workers)
    print(f"modes: {report.n_modes}  rule elements: {report.rule_elements} "
          f"of {report.n_elements}")
    print(f"verification 1 (reduced vs full): {report.v1:.3e}  gate {report.gate_solution:.3e} "
          f"{'pass' if report.v1_pass else 'FAIL'}")
    print(f"verification 2 (hyper-reduced vs reduced): {report.v2:.3e}  gate {report.gate_hrom:.3e} "
          f"{'pass' if report.v2_pass else 'FAIL'}")
    print(f"speedup vs full order: reduced {report.speedup_rom:.1f}x, "
          f"hyper-reduced {report.speedup_hrom:.1f}x ({run.seconds:.1f}s total)")
    return 0 if report.ok else 2


def _cmd_stage(args, stage_fn) -> int:
    config = _load(args)
    stage_fn(config, workers=_resolve_workers(args, config))
    return 0


def _cmd_stage3(args) -> int:
    config = _load(args)
    out = pipeline.stage3(config, workers=_resolve_workers(args, config))
    print(f"verification 1 (reduced vs full): {out['v1']:.3e}")
    return 0


def _cmd_stage5(args) -> int:
    config = _load(args)
    out = pipeline.stage5(config, workers=_resolve_workers(args, config))
    print(f"verification 2 (hyper-reduced vs reduced): {out['v2']:.3e}")
    return 0


def _cmd_verify(args) -> int:
    config = _load(args)
    res = pipeline.verify(config)
    print(f"verification 1: {res.v1:.17g}  gate {res.gate_solution:.3e} "
          f"{'pass' if res.v1_pass else 'FAIL'}")
    print(f"verification 2: {res.v2:.17g}  gate {res.gate_hrom:.3e} "
          f"{'pass' if res.v2_pass else 'FAIL'}")
    if not res.matches_report:
        print("stored report does not match the recomputed values", file=sys.stderr)
        return 1
    return 0 if res.ok else 2


def _parse_schedule(text):
    if not text:
        return None
    phases = []
    for part in text.split(","):
        steps, _, state = part.strip().partition(":")
        if state not in ("on", "off"):
            raise ValueError(f"schedule phase {part!r} must end in ':on' or ':off'")
        on = state == "on"
        phases.append(Phase(steps=int(steps), source_on=on, velocity_on=on))
    return tuple(phases)


def _cmd_evaluate(args) -> int:
    config = _load(args)
    mu = ParamPoint(args.q_dot, args.vel_scale)
    out = pipeline.evaluate_hrom(config, mu, out_csv=args.csv, compare_fom=args.compare_fom,
                                 schedule=_parse_schedule(args.schedule))
    print(f"ran {len(out['mean_temperature'])} steps with {out['rule_elements']} elements "
          f"in {out['seconds']:.3f}s; peak mean temperature {out['mean_temperature'].max():.6g}")
    if "relative_error" in out:
        print(f"relative error vs full order: {out['relative_error']:.3e} "
              f"(full solve {out['fom_seconds']:.3f}s)")
    return 0


def _cmd_bench(args) -> int:
    workers_list = [int(w) for w in args.workers_list.split(",") if w.strip()]
    rows = pipeline.bench_svd(rows=args.rows, cols=args.cols, rank=args.rank,
                              workers_list=workers_list, seed=args.seed,
                              repeats=args.repeats)
    header = ["method", "rows", "cols", "workers", "seconds", "speedup", "modes"]
    print("  ".join(header))
    for r in rows:
        print(f"{r['method']:>10}  {r['rows']}x{r['cols']}  workers={r['workers']}  "
              f"{r['seconds']:.4f}s  x{r['speedup']:.2f}  modes={r['modes']}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            w.writerows(rows)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "stage1": lambda a: _cmd_stage(a, pipeline.stage1),
        "stage2": lambda a: _cmd_stage(a, pipeline.stage2),
        "stage3": _cmd_stage3,
        "stage4": lambda a: _cmd_stage(a, pipeline.stage4),
        "stage5": _cmd_stage5,
        "verify": _cmd_verify,
        "evaluate": _cmd_evaluate,
        "bench-svd": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # usage errors raise SystemExit in parse_args, never here
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
