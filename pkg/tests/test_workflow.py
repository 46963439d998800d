"""Workflow checks: config round-trips, graph scheduling, the five-stage
pipeline against its one-shot driver, reporting, CLI behavior."""

import csv
import dataclasses
import time
from types import SimpleNamespace

import numpy as np
import pytest

from romflow import blocks
from romflow.fem import ParamPoint
from romflow.workflow import pipeline
from romflow.workflow.cli import _parse_schedule, _resolve_workers, main
from romflow.workflow.config import (
    SvdSettings,
    WorkflowConfig,
    config_from_dict,
    dump_config,
    load_config,
)
from romflow.workflow.graph import CancelToken, TaskGraph, execute_graph
from romflow.workflow.pipeline import RunReport, build_graph, emit_report, run_paths


def small_config(out_dir, **overrides):
    kw = dict(
        mesh_divisions=8,
        heating_steps=3,
        cooling_steps=2,
        training=(ParamPoint(0.8, 0.7), ParamPoint(1.3, 1.1)),
        block_rows=32,
        block_cols=8,
        workers=2,
        out_dir=str(out_dir),
    )
    kw.update(overrides)
    return WorkflowConfig(**kw)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    config = small_config(tmp_path_factory.mktemp("small") / "run")
    report, run = pipeline.run_workflow(config)
    return {"config": config, "report": report, "run": run,
            "paths": run_paths(config)}


class TestConfig:
    def test_dict_round_trip(self, tmp_path):
        config = small_config(tmp_path, gate_solution=1e-3,
                              svd=SvdSettings(method="randomized", seed=7))
        assert config_from_dict(config.to_dict()) == config

    def test_file_round_trip(self, tmp_path):
        config = small_config(tmp_path, partition_size=400, n_recursions=3)
        path = tmp_path / "config.yaml"
        dump_config(config, path)
        assert load_config(path) == config

    def test_unknown_keys_rejected(self, tmp_path):
        raw = small_config(tmp_path).to_dict()
        raw["bogus"] = 1
        with pytest.raises(ValueError, match="bogus"):
            config_from_dict(raw)
        raw = small_config(tmp_path).to_dict()
        raw["svd"] = {"methodd": "tsqr"}
        with pytest.raises(ValueError, match="methodd"):
            config_from_dict(raw)

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError, match="training"):
            small_config(tmp_path, training=())
        with pytest.raises(ValueError, match="mesh_divisions"):
            small_config(tmp_path, mesh_divisions=1)
        with pytest.raises(ValueError, match="workers"):
            small_config(tmp_path, workers=0)
        with pytest.raises(ValueError, match="positive"):
            small_config(tmp_path, eps_solution=0.0)
        with pytest.raises(ValueError, match="svd method"):
            SvdSettings(method="power")

    def test_gates_default_to_hundred_epsilon(self, tmp_path):
        config = small_config(tmp_path)
        assert config.solution_gate == 100.0 * config.eps_solution
        assert config.hrom_gate == 100.0 * config.eps_residual
        tight = small_config(tmp_path, gate_solution=1e-9, gate_hrom=2e-7)
        assert tight.solution_gate == 1e-9
        assert tight.hrom_gate == 2e-7

    def test_schedule_shapes_the_problem(self, tmp_path):
        config = small_config(tmp_path)
        assert config.time_steps == 5
        phases = config.schedule()
        assert phases[0].steps == 3 and phases[0].source_on
        assert phases[1].steps == 2 and not phases[1].source_on
        assert phases[1].velocity_on  # convection keeps running while cooling
        problem = config.problem()
        assert problem.time_steps == 5
        assert problem.mesh.n_elements == 2 * 8 * 8


class TestGraph:
    def test_add_validation(self):
        graph = TaskGraph()
        graph.add("a", lambda inputs, cancel: 1)
        with pytest.raises(ValueError, match="duplicate"):
            graph.add("a", lambda inputs, cancel: 1)
        with pytest.raises(ValueError, match="unknown"):
            graph.add("b", lambda inputs, cancel: 1, deps=["missing"])
        with pytest.raises(ValueError):
            execute_graph(graph, workers=0)

    def test_chain_passes_results(self):
        graph = TaskGraph()
        graph.add("t0", lambda inputs, cancel: 1)
        for i in range(1, 5):
            graph.add(f"t{i}",
                      lambda inputs, cancel, d=f"t{i-1}": inputs[d] + 1,
                      deps=[f"t{i-1}"])
        run = execute_graph(graph, workers=3)
        assert run.ok
        assert run.results["t4"] == 5
        for i in range(1, 5):
            assert run.records[f"t{i}"].started >= run.records[f"t{i-1}"].finished

    def test_ready_tasks_start_in_insertion_order(self):
        graph = TaskGraph()
        for name in ("c", "a", "d", "b"):
            graph.add(name, lambda inputs, cancel, n=name: n)
        run = execute_graph(graph, workers=1)
        order = sorted(run.records, key=lambda n: run.records[n].started)
        assert order == ["c", "a", "d", "b"]

    def test_failure_cancels_transitive_dependents(self):
        graph = TaskGraph()
        graph.add("a", lambda inputs, cancel: "a")
        graph.add("b", lambda inputs, cancel: 1 / 0, deps=["a"])
        graph.add("c", lambda inputs, cancel: "c", deps=["a"])
        graph.add("d", lambda inputs, cancel: "d", deps=["b"])
        graph.add("e", lambda inputs, cancel: "e", deps=["d", "c"])
        token = CancelToken()
        run = execute_graph(graph, workers=1, cancel=token)
        assert not run.ok
        assert run.failed == ("b",)
        assert isinstance(run.records["b"].error, ZeroDivisionError)
        assert run.records["d"].status == "cancelled"
        assert run.records["e"].status == "cancelled"
        assert run.records["c"].status == "done"   # independent of the failure
        assert token.cancelled()
        assert "d" not in run.results

    def test_sleep_tasks_overlap_on_workers(self):
        def build():
            graph = TaskGraph()
            for i in range(8):
                graph.add(f"s{i}", lambda inputs, cancel: time.sleep(0.05))
            return graph

        serial = execute_graph(build(), workers=1)
        parallel = execute_graph(build(), workers=4)
        assert serial.ok and parallel.ok
        assert serial.seconds >= 0.35
        assert parallel.seconds < 0.5 * serial.seconds

    def test_results_do_not_depend_on_worker_count(self):
        def build():
            graph = TaskGraph()
            graph.add("x", lambda inputs, cancel: 3)
            graph.add("y", lambda inputs, cancel: 4)
            graph.add("sum", lambda inputs, cancel: inputs["x"] + inputs["y"], deps=["x", "y"])
            graph.add("sq", lambda inputs, cancel: inputs["sum"] ** 2, deps=["sum"])
            return graph

        runs = [execute_graph(build(), workers=w) for w in (1, 2, 4)]
        assert all(r.results == runs[0].results for r in runs)
        assert runs[0].results["sq"] == 49


class TestPipeline:
    def test_structure_of_the_one_shot_graph(self, tmp_path):
        config = small_config(tmp_path)
        graph = build_graph(config, workers=2)
        names = set(graph.tasks)
        m = len(config.training)
        assert len(graph) == 3 * m + 8
        for i in range(m):
            assert {f"fom:{i}", f"rom:{i}", f"hrom:{i}"} <= names
        assert graph.dependents()["fom:0"] == ["gather-snapshots"]
        assert set(graph.tasks["report"].deps) == {
            "gather-snapshots", "svd-solution", "gather-rom", "cubature", "gather-hrom",
        }

    def test_report_numbers_and_gates(self, small_run):
        report = small_run["report"]
        config = small_run["config"]
        assert report.n_params == 2 and report.time_steps == 5
        assert report.n_dofs == 49 and report.n_elements == 128
        assert report.v1 <= config.solution_gate
        assert report.v2 <= config.hrom_gate
        assert report.ok and small_run["run"].ok
        assert report.rule_elements < report.n_elements
        assert len(report.v1_per_param) == 2 and len(report.v2_per_param) == 2
        assert max(report.v1_per_param) >= report.v1 * 0.99 / np.sqrt(2)

    def test_artifacts_exist(self, small_run):
        paths = small_run["paths"]
        for p in (paths.resolved_config, paths.snapshots, paths.fom_log,
                  paths.basis_dir / "basis.bmx", paths.rom_snapshots, paths.residuals,
                  paths.rom_log, paths.rule, paths.cubature_cost, paths.hrom_snapshots,
                  paths.hrom_log, paths.report_dir / "report.csv",
                  paths.report_dir / "verification.csv", paths.report_dir / "speedup.csv"):
            assert p.exists(), p
        assert load_config(paths.resolved_config) == small_run["config"]

    def test_stages_reproduce_the_one_shot_artifacts(self, small_run, tmp_path):
        config = dataclasses.replace(small_run["config"], out_dir=str(tmp_path / "staged"))
        pipeline.stage1(config)
        pipeline.stage2(config)
        out3 = pipeline.stage3(config)
        pipeline.stage4(config)
        out5 = pipeline.stage5(config)
        staged = run_paths(config)
        ref = small_run["paths"]
        for a, b in ((staged.snapshots, ref.snapshots),
                     (staged.basis_dir / "basis.bmx", ref.basis_dir / "basis.bmx"),
                     (staged.rom_snapshots, ref.rom_snapshots),
                     (staged.residuals, ref.residuals),
                     (staged.rule, ref.rule),
                     (staged.hrom_snapshots, ref.hrom_snapshots)):
            assert a.read_bytes() == b.read_bytes(), a
        assert out3["v1"] == small_run["report"].v1
        assert out5["v2"] == small_run["report"].v2

    def test_worker_count_leaves_numbers_alone(self, small_run, tmp_path):
        config = dataclasses.replace(small_run["config"], out_dir=str(tmp_path / "w1"),
                                     workers=1)
        report, _ = pipeline.run_workflow(config)
        ref = small_run["report"]
        for name in ("n_modes", "rule_elements", "rule_error", "v1", "v2",
                     "v1_per_param", "v2_per_param"):
            assert getattr(report, name) == getattr(ref, name), name
        assert run_paths(config).hrom_snapshots.read_bytes() == \
            small_run["paths"].hrom_snapshots.read_bytes()

    def test_lossless_training_set_is_reproduced(self, tmp_path):
        config = small_config(tmp_path / "run", heating_steps=1, cooling_steps=0, workers=1)
        report, _ = pipeline.run_workflow(config)
        # two snapshots, two modes: the basis spans the training set exactly
        assert report.n_modes == len(config.training)
        assert report.v1 <= 1e-9
        assert report.v2 <= 1e-9

    def test_gate_failure_reports_without_raising(self, tmp_path):
        config = small_config(tmp_path / "run", gate_solution=1e-30)
        report, run = pipeline.run_workflow(config)
        assert run.ok               # every task finished
        assert not report.v1_pass   # the gate is the report's verdict
        assert not report.ok

    def test_task_failure_raises_with_task_name(self, tmp_path):
        config = small_config(tmp_path / "run", eps_residual=1e-300)
        with pytest.raises(RuntimeError, match="cubature"):
            pipeline.run_workflow(config)

    def test_verify_matches_report_bitwise(self, small_run):
        res = pipeline.verify(small_run["config"])
        assert res.ok and res.matches_report
        assert res.v1 == small_run["report"].v1
        assert res.v2 == small_run["report"].v2

    def test_verify_flags_tampered_report(self, small_run, tmp_path):
        report_csv = small_run["paths"].report_dir / "report.csv"
        original = report_csv.read_text()
        try:
            rows = [r.split(",") for r in original.splitlines()]
            tampered = "\n".join(
                ",".join(["v1", "0.5"] if r[0] == "v1" else r) for r in rows
            )
            report_csv.write_text(tampered + "\n")
            assert not pipeline.verify(small_run["config"]).matches_report
        finally:
            report_csv.write_text(original)

    def test_mean_temperature_weighting(self, small_run):
        mesh = small_run["config"].problem().mesh
        flat = np.full((mesh.n_nodes, 3), 2.5)
        got = pipeline._mean_temperature(mesh, flat)
        assert np.allclose(got, 2.5, rtol=0, atol=1e-13)

    def test_evaluate_matches_stored_training_run(self, small_run):
        config = small_run["config"]
        mu = config.training[0]
        out = pipeline.evaluate_hrom(config, mu, compare_fom=True)
        mesh = config.problem().mesh
        stored = blocks.to_dense(blocks.load_bmx(small_run["paths"].hrom_snapshots))
        cols = stored[:, :config.time_steps]
        full = np.stack([mesh.full_state(cols[:, j]) for j in range(cols.shape[1])], axis=1)
        expected = pipeline._mean_temperature(mesh, full)
        assert np.array_equal(out["mean_temperature"], expected)
        assert out["relative_error"] <= config.solution_gate + config.hrom_gate
        assert out["rule_elements"] == small_run["report"].rule_elements

    def test_evaluate_schedule_override(self, small_run, tmp_path):
        from romflow.fem import Phase
        config = small_run["config"]
        cycle = (Phase(3), Phase(3, source_on=False, velocity_on=False),
                 Phase(3), Phase(3, source_on=False, velocity_on=False))
        trace = tmp_path / "trace.csv"
        out = pipeline.evaluate_hrom(config, config.training[1], out_csv=trace,
                                     schedule=cycle)
        temps = out["mean_temperature"]
        assert temps.shape == (12,)
        assert temps[2] > temps[0] * 0.99 and temps[2] > 0
        assert temps[5] < temps[2]          # decays once the source stops
        assert temps[8] > temps[5]          # second heating leg
        assert temps[11] < temps[8]
        lines = trace.read_text().splitlines()
        assert len(lines) == 13 and lines[0] == "step,time,mean_temperature"

    def test_report_files_round_trip(self, tmp_path):
        rep = RunReport(
            n_params=2, time_steps=5, n_dofs=49, n_elements=128, n_modes=8,
            rule_elements=63, rule_error=1.5e-12, v1=8.9e-7, v2=3.9e-16,
            v1_per_param=(8e-7, 9e-7), v2_per_param=(3e-16, 4e-16),
            gate_solution=1e-4, gate_hrom=1e-6,
            fom_seconds=(1.0, 2.0), rom_seconds=(0.5, 0.5), hrom_seconds=(0.25, 0.25),
            workers=2, svd_method="tsqr", svd_cost=1000, ecm_cost=2000,
        )
        emit_report(rep, tmp_path, (ParamPoint(0.8, 0.7), ParamPoint(1.3, 1.1)))
        with open(tmp_path / "report.csv", newline="") as fh:
            rows = {r[0]: r[1] for r in csv.reader(fh)}
        assert float(rows["v1"]) == rep.v1
        assert rows["v1_pass"] == "True" and rows["v2_pass"] == "True"
        assert float(rows["speedup_rom"]) == 3.0
        assert float(rows["speedup_hrom"]) == 6.0
        with open(tmp_path / "verification.csv", newline="") as fh:
            vrows = list(csv.reader(fh))
        assert len(vrows) == 1 + 2 + 1     # header, params, overall
        assert vrows[-1][0] == "overall"
        lines = (tmp_path / "speedup.csv").read_text().splitlines()
        assert lines[-1].startswith("#")

    def test_bench_svd_rows(self):
        rows = pipeline.bench_svd(rows=96, cols=12, rank=3, workers_list=(1, 2),
                                  seed=1, repeats=1)
        assert len(rows) == 4
        assert {r["method"] for r in rows} == {"tsqr", "randomized"}
        assert all(r["seconds"] > 0 and r["modes"] >= 3 for r in rows)


class TestCli:
    def write_config(self, config, path):
        dump_config(config, path)
        return str(path)

    def test_run_then_verify_exit_zero(self, tmp_path, capsys):
        cfg = self.write_config(small_config(tmp_path / "run", workers=1),
                                tmp_path / "c.yaml")
        assert main(["run", "-c", cfg]) == 0
        out = capsys.readouterr().out
        assert "verification 1" in out and "pass" in out
        assert main(["verify", "-c", cfg]) == 0

    def test_gate_failure_exits_two(self, tmp_path, capsys):
        cfg = self.write_config(
            small_config(tmp_path / "run", workers=1, gate_solution=1e-30),
            tmp_path / "c.yaml")
        assert main(["run", "-c", cfg]) == 2
        assert "FAIL" in capsys.readouterr().out
        assert main(["verify", "-c", cfg]) == 2

    def test_errors_exit_one(self, tmp_path, capsys):
        assert main(["run", "-c", str(tmp_path / "missing.yaml")]) == 1
        assert "error" in capsys.readouterr().err
        with pytest.raises(SystemExit) as exc:
            main(["run"])                       # missing --config
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "-c", "x"])     # unknown command
        assert exc.value.code == 1

    def test_worker_precedence(self, tmp_path, monkeypatch):
        config = small_config(tmp_path)
        args = SimpleNamespace(workers=None)
        monkeypatch.delenv("ROMFLOW_WORKERS", raising=False)
        assert _resolve_workers(args, config) == config.workers
        monkeypatch.setenv("ROMFLOW_WORKERS", "3")
        assert _resolve_workers(args, config) == 3
        assert _resolve_workers(SimpleNamespace(workers=7), config) == 7
        monkeypatch.setenv("ROMFLOW_WORKERS", "0")
        with pytest.raises(ValueError):
            _resolve_workers(args, config)

    def test_evaluate_writes_trace(self, small_run, tmp_path, capsys):
        cfg = self.write_config(small_run["config"], tmp_path / "c.yaml")
        trace = tmp_path / "trace.csv"
        code = main(["evaluate", "-c", cfg, "--q-dot", "1.0", "--vel-scale", "0.9",
                     "--csv", str(trace), "--schedule", "2:on,2:off"])
        assert code == 0
        assert "4 steps" in capsys.readouterr().out
        assert len(trace.read_text().splitlines()) == 5

    def test_schedule_parsing(self, small_run, tmp_path, capsys):
        phases = _parse_schedule("4:on,2:off")
        assert [p.steps for p in phases] == [4, 2]
        assert phases[0].source_on and phases[0].velocity_on
        assert not phases[1].source_on and not phases[1].velocity_on
        assert _parse_schedule("") is None
        cfg = self.write_config(small_run["config"], tmp_path / "c.yaml")
        code = main(["evaluate", "-c", cfg, "--q-dot", "1.0", "--vel-scale", "0.9",
                     "--schedule", "3:maybe"])
        assert code == 1
        assert "on" in capsys.readouterr().err

    def test_bench_csv(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = main(["bench-svd", "--rows", "96", "--cols", "12", "--rank", "3",
                     "--workers-list", "1,2", "--repeats", "1", "--csv", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        capsys.readouterr()
