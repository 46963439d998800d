"""YAML-backed configuration for the end-to-end pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..blocks import BlockShape
from ..fem import FomProblem, ParamPoint, Phase, recirculating_velocity, unit_square_mesh


@dataclass(frozen=True)
class SvdSettings:
    method: str = "tsqr"            # tsqr | randomized | lanczos
    seed: int = 2024
    oversampling: int = 8
    power_iterations: int = 2
    lanczos_k: int = 60
    lanczos_rank: int = 40
    lanczos_nsv: int = 20
    lanczos_block: int = 8

    def __post_init__(self):
        if self.method not in ("tsqr", "randomized", "lanczos"):
            raise ValueError(f"unknown svd method {self.method!r}")


@dataclass(frozen=True)
class WorkflowConfig:
    mesh_divisions: int = 32
    diffusivity: float = 0.05
    dt: float = 0.5
    theta: float = 1.0
    reaction_cubic: float = 0.0
    heating_steps: int = 16
    cooling_steps: int = 11
    boundary_value: float = 0.0
    training: tuple[ParamPoint, ...] = ()
    eps_solution: float = 1e-6
    eps_residual: float = 1e-8
    svd: SvdSettings = field(default_factory=SvdSettings)
    block_rows: int = 256
    block_cols: int = 64
    partition_size: int = 0         # 0 fits one monolithic rule
    n_recursions: int = 2
    workers: int = 4
    out_dir: str = "runs/desk"
    gate_solution: float | None = None   # None: 100 * eps_solution
    gate_hrom: float | None = None       # None: 100 * eps_residual

    def __post_init__(self):
        if self.mesh_divisions < 2:
            raise ValueError("mesh_divisions must be at least 2")
        if not self.training:
            raise ValueError("training set is empty")
        if self.heating_steps < 1 or self.cooling_steps < 0:
            raise ValueError("need at least one heating step and nonnegative cooling steps")
        if self.eps_solution <= 0 or self.eps_residual <= 0:
            raise ValueError("tolerances must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def time_steps(self) -> int:
        return self.heating_steps + self.cooling_steps

    @property
    def solution_gate(self) -> float:
        return self.gate_solution if self.gate_solution is not None else 100.0 * self.eps_solution

    @property
    def hrom_gate(self) -> float:
        return self.gate_hrom if self.gate_hrom is not None else 100.0 * self.eps_residual

    def block_shape(self) -> BlockShape:
        return BlockShape(self.block_rows, self.block_cols)

    def schedule(self) -> tuple[Phase, ...]:
        phases = [Phase(steps=self.heating_steps, source_on=True)]
        if self.cooling_steps:
            phases.append(Phase(steps=self.cooling_steps, source_on=False))
        return tuple(phases)

    def problem(self) -> FomProblem:
        mesh = unit_square_mesh(self.mesh_divisions, self.mesh_divisions,
                                dirichlet_value=self.boundary_value)
        return FomProblem(
            mesh=mesh,
            velocity_field=recirculating_velocity(mesh.nodes),
            diffusivity=self.diffusivity,
            time_steps=self.time_steps,
            dt=self.dt,
            theta=self.theta,
            reaction_cubic=self.reaction_cubic,
            schedule=self.schedule(),
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["training"] = [{"q_dot": p.q_dot, "vel_scale": p.vel_scale} for p in self.training]
        out["svd"] = dataclasses.asdict(self.svd)
        out["out_dir"] = str(self.out_dir)  # callers may hand us a Path
        return out


def _require_keys(mapping: dict, known: set, where: str) -> None:
    extra = set(mapping) - known
    if extra:
        raise ValueError(f"unknown keys in {where}: {sorted(extra)}")


def config_from_dict(raw: dict) -> WorkflowConfig:
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(WorkflowConfig)} | {"blocks", "cubature", "gates"}
    _require_keys(raw, known, "config")
    training = tuple(
        ParamPoint(float(p["q_dot"]), float(p["vel_scale"])) for p in raw.pop("training", [])
    )
    svd_raw = raw.pop("svd", {}) or {}
    _require_keys(svd_raw, {f.name for f in dataclasses.fields(SvdSettings)}, "svd")
    svd = SvdSettings(**svd_raw)
    blocks_raw = raw.pop("blocks", {}) or {}
    _require_keys(blocks_raw, {"rows", "cols"}, "blocks")
    cub_raw = raw.pop("cubature", {}) or {}
    _require_keys(cub_raw, {"partition_size", "n_recursions"}, "cubature")
    gates_raw = raw.pop("gates", {}) or {}
    _require_keys(gates_raw, {"solution", "hrom"}, "gates")
    kwargs = dict(raw)
    kwargs["training"] = training
    kwargs["svd"] = svd
    if "rows" in blocks_raw:
        kwargs["block_rows"] = int(blocks_raw["rows"])
    if "cols" in blocks_raw:
        kwargs["block_cols"] = int(blocks_raw["cols"])
    if "partition_size" in cub_raw:
        kwargs["partition_size"] = int(cub_raw["partition_size"])
    if "n_recursions" in cub_raw:
        kwargs["n_recursions"] = int(cub_raw["n_recursions"])
    if gates_raw.get("solution") is not None:
        kwargs["gate_solution"] = float(gates_raw["solution"])
    if gates_raw.get("hrom") is not None:
        kwargs["gate_hrom"] = float(gates_raw["hrom"])
    return WorkflowConfig(**kwargs)


def load_config(path) -> WorkflowConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return config_from_dict(raw)


def dump_config(config: WorkflowConfig, path) -> None:
    data = config.to_dict()
    data["blocks"] = {"rows": data.pop("block_rows"), "cols": data.pop("block_cols")}
    data["cubature"] = {
        "partition_size": data.pop("partition_size"),
        "n_recursions": data.pop("n_recursions"),
    }
    data["gates"] = {"solution": data.pop("gate_solution"), "hrom": data.pop("gate_hrom")}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
