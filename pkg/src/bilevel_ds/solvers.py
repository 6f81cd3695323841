"""Named solvers used by the benchmark and the command line."""
from __future__ import annotations

from .core import SolverConfig
from .ds_directional import run_directional
from .ds_mesh import run_mesh

SOLVERS = ("mesh-ds", "coordinate-ds", "random-ds", "dense-ds")
BENCH_SOLVERS = ("mesh-ds", "coordinate-ds", "random-ds")


def default_config(solver_id: str, problem=None, **overrides) -> SolverConfig:
    """Benchmark defaults for ``solver_id``; the mesh solver picks its
    smooth/nonsmooth update from the problem's metadata."""
    if solver_id not in SOLVERS:
        raise KeyError(f"unknown solver {solver_id!r}")
    if solver_id == "mesh-ds":
        kw = {}
        if problem is not None:
            kw["smooth_mode"] = problem.meta.smooth_true_objective
        kw.update(overrides)
        return SolverConfig.mesh_defaults(**kw)
    kw = dict(direction_mode=solver_id.split("-")[0])
    kw.update(overrides)
    return SolverConfig(**kw)


def run_solver(solver_id: str, problem, config: SolverConfig, x0, oracle):
    if solver_id == "mesh-ds":
        return run_mesh(problem, config, x0, oracle, solver_name=solver_id)
    if solver_id in SOLVERS:
        return run_directional(problem, config, x0, oracle, solver_name=solver_id)
    raise KeyError(f"unknown solver {solver_id!r}")
