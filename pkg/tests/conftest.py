"""Shared fixtures.

BLAS thread pools are pinned to a single thread before numpy loads so
that reduction orders, and with them every verification number, stay
identical across machines and worker counts.
"""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import dataclasses
import pathlib
import time

import numpy as np
import pytest

from romflow.fem import FomProblem
from romflow.fem.mesh import recirculating_velocity, unit_square_mesh
from romflow.workflow import pipeline
from romflow.workflow.config import load_config

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
DESK_CONFIG = REPO_ROOT / "configs" / "desk.yaml"


def make_problem(nx: int = 8, time_steps: int = 4, **overrides) -> FomProblem:
    """Small convection-diffusion problem for unit tests."""
    mesh = overrides.pop("mesh", None) or unit_square_mesh(nx, nx)
    kw = dict(
        mesh=mesh,
        velocity_field=recirculating_velocity(mesh.nodes),
        diffusivity=0.05,
        time_steps=time_steps,
        dt=0.5,
    )
    kw.update(overrides)
    return FomProblem(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240816)


@pytest.fixture(scope="session")
def desk_config(tmp_path_factory):
    config = load_config(DESK_CONFIG)
    out = tmp_path_factory.mktemp("desk")
    return dataclasses.replace(config, out_dir=str(out))


@pytest.fixture(scope="session")
def desk_run(desk_config):
    """One full desk-scale pipeline execution, shared by all consumers."""
    t0 = time.perf_counter()
    report, run = pipeline.run_workflow(desk_config)
    return {
        "config": desk_config,
        "report": report,
        "run": run,
        "paths": pipeline.run_paths(desk_config),
        "seconds": time.perf_counter() - t0,
    }
