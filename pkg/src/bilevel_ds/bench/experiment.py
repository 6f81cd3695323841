"""Multi-start benchmark runner: cells, scoring, persisted outputs."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import stable_hash
from ..lower_level import GradientDescentOracle
from ..solvers import BENCH_SOLVERS, default_config, run_solver
from ..trace import fmt, read_trace
from . import svg
from .problems import N_STARTS, get_problem, instances, suite
from .profiles import INF, build_table, check_axioms, convergence_eval_count

log = logging.getLogger(__name__)

LLTOLS = (1e-3, 1e-6)
TOLS = (1e-3, 1e-6)
GAMMA_MAX = 2.0 ** 6
KAPPA_MAX = 250.0


def tag(v: float) -> str:
    return f"{v:.0e}"


@dataclass(frozen=True)
class Cell:
    problem_id: str
    start_id: int
    solver: str
    lltol: float

    @property
    def cell_id(self) -> str:
        return f"{self.problem_id}_{self.start_id}_{self.solver}_{tag(self.lltol)}"


@dataclass
class ExperimentConfig:
    solvers: list = field(default_factory=lambda: list(BENCH_SOLVERS))
    problems: list = field(default_factory=lambda: [p.name for p in suite()])
    lltols: list = field(default_factory=lambda: list(LLTOLS))
    tols: list = field(default_factory=lambda: list(TOLS))
    master_seed: int = 0
    n_starts: int = N_STARTS
    budget: int = 500
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError("unknown experiment keys: " + ", ".join(sorted(unknown)))
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def cells(self) -> list:
        return [Cell(p, i, s, ll) for ll in self.lltols for p in self.problems
                for i in range(self.n_starts) for s in self.solvers]


def cell_seed(master_seed: int, cell_id: str) -> int:
    return stable_hash(master_seed, cell_id) >> 1


def run_cell(cell: Cell, exp: ExperimentConfig):
    """Run one (problem, start, solver, accuracy) cell; returns (cell_id, trace, error)."""
    try:
        problem = get_problem(cell.problem_id)
        x0 = instances(problem, exp.master_seed, exp.n_starts)[cell.start_id].x0
        cfg = default_config(cell.solver, problem, eps_oracle=cell.lltol, budget=exp.budget,
                             seed=cell_seed(exp.master_seed, cell.cell_id), **exp.overrides)
        trace = run_solver(cell.solver, problem, cfg, x0, GradientDescentOracle(cell.lltol))
        trace.extra["cell_id"] = cell.cell_id
        return cell.cell_id, trace, None
    except Exception as exc:  # scored as unsolved, the experiment goes on
        log.warning("cell %s failed: %r", cell.cell_id, exc)
        return cell.cell_id, None, repr(exc)


def _run_cell_args(args):
    return run_cell(*args)


def default_jobs() -> int:
    env = os.environ.get("BDS_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list
    traces: dict
    errors: dict
    tables: dict = field(default_factory=dict)

    def table(self, lltol, tol):
        return self.tables[(lltol, tol)]


def score(exp: ExperimentConfig, cells: list, traces: dict) -> dict:
    """Profile tables keyed by (lltol, tol); F_low is the cross-solver best per instance."""
    tables = {}
    for ll in exp.lltols:
        inst = [(p, i) for p in exp.problems for i in range(exp.n_starts)]
        F_low = {}
        for p, i in inst:
            vals = [traces[Cell(p, i, s, ll).cell_id].best_F for s in exp.solvers
                    if traces.get(Cell(p, i, s, ll).cell_id) is not None]
            F_low[(p, i)] = min(vals) if vals else INF
        n_p = [get_problem(p).n_x for p, _ in inst]
        for tol in exp.tols:
            t = np.full((len(inst), len(exp.solvers)), INF)
            for a, (p, i) in enumerate(inst):
                for b, s in enumerate(exp.solvers):
                    tr = traces.get(Cell(p, i, s, ll).cell_id)
                    if tr is not None:
                        t[a, b] = convergence_eval_count(tr, F_low[(p, i)], tol)
            table = build_table(t, [f"{p}_{i}" for p, i in inst], exp.solvers, n_p, tol, ll)
            if table.dropped:
                log.info("lltol %s tol %s: dropped unsolved instances %s", ll, tol, table.dropped)
            check_axioms(table)
            tables[(ll, tol)] = table
    return tables


def run_experiment(exp: ExperimentConfig = None, out_dir=None, jobs: int = None) -> ExperimentResult:
    exp = exp or ExperimentConfig()
    cells = exp.cells()
    jobs = default_jobs() if jobs is None else jobs
    args = [(c, exp) for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, args, chunksize=4))
    else:
        results = [run_cell(c, exp) for c in cells]
    traces = {cid: tr for cid, tr, _ in results if tr is not None}
    errors = {cid: err for cid, _, err in results if err is not None}
    res = ExperimentResult(exp, cells, traces, errors, score(exp, cells, traces))
    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


# --------------------------------------------------------------------------
# persisted outputs
# --------------------------------------------------------------------------

def _best_row(trace):
    return min(trace.rows, key=lambda r: r.F_tilde)


def write_outputs(res: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for cid, tr in res.traces.items():
        tr.write_csv(out / "traces" / f"{cid}.csv")
    manifest = {"config": res.config.to_dict(), "cells": [c.cell_id for c in res.cells],
                "errors": res.errors}
    (out / "experiment.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_table_csv(res, out / "table.csv")
    write_profiles(res, out)
    write_figures(res, out / "figures")
    return out


def write_table_csv(res: ExperimentResult, path) -> None:
    exp = res.config
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "problem", "start", "solver", "lltol", "t_evals", "F_best", "F_star_gap"]
                   + [f"t_evals_tol{tag(t)}" for t in exp.tols[1:]] + ["termination", "upper_evals"])
        for c in res.cells:
            inst = f"{c.problem_id}_{c.start_id}"
            ts = []
            for tol in exp.tols:
                table = res.tables[(c.lltol, tol)]
                if inst in table.instances:
                    ts.append(table.t[table.instances.index(inst), table.solvers.index(c.solver)])
                else:
                    ts.append(INF)
            tr = res.traces.get(c.cell_id)
            if tr is None:
                F_best, gap, term, ev = "", "", "error", ""
            else:
                problem = get_problem(c.problem_id)
                best = _best_row(tr)
                F_best = fmt(best.F_tilde)
                gap = fmt(problem.true_F(best.x) - problem.F_star) if problem.F_star is not None else ""
                term, ev = tr.termination, tr.upper_evals
            tcols = ["inf" if not np.isfinite(v) else str(int(v)) for v in ts]
            w.writerow([c.cell_id, c.problem_id, c.start_id, c.solver, tag(c.lltol), tcols[0], F_best, gap]
                       + tcols[1:] + [term, ev])


def write_profiles(res: ExperimentResult, out: Path) -> None:
    for tol in res.config.tols:
        for kind in ("perf", "data"):
            with open(out / f"profiles_{kind}_{tag(tol)}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["lltol", "solver", "gamma" if kind == "perf" else "kappa",
                            "rho" if kind == "perf" else "d", "n_instances", "dropped"])
                for ll in res.config.lltols:
                    table = res.tables[(ll, tol)]
                    fns = table.rho if kind == "perf" else table.d
                    for s in table.solvers:
                        breaks, vals = fns[s]
                        for b, v in zip(breaks, vals):
                            w.writerow([tag(ll), s, fmt(b), fmt(v), len(table.instances), len(table.dropped)])


def write_figures(res: ExperimentResult, fig_dir: Path) -> list:
    paths = []
    for tol in res.config.tols:
        perf, data = [], []
        for ll in res.config.lltols:
            table = res.tables[(ll, tol)]
            title = f"LL_tol = {tag(ll)}, tol = {tag(tol)}"
            perf.append((title, table.rho))
            data.append((title, table.d))
        paths.append(svg.write_svg(fig_dir / f"perf_tol{tag(tol)}.svg",
                                   svg.profile_svg(perf, (1.0, GAMMA_MAX), True, "gamma", "rho_s(gamma)")))
        paths.append(svg.write_svg(fig_dir / f"data_tol{tag(tol)}.svg",
                                   svg.profile_svg(data, (0.0, KAPPA_MAX), False, "kappa", "d_s(kappa)")))
    return paths


def load_experiment(out_dir) -> ExperimentResult:
    """Rebuild an experiment from its directory and rescore it from the traces."""
    out = Path(out_dir)
    manifest = json.loads((out / "experiment.json").read_text())
    exp = ExperimentConfig.from_dict(manifest["config"])
    cells = exp.cells()
    traces = {}
    for c in cells:
        p = out / "traces" / f"{c.cell_id}.csv"
        if p.exists():
            traces[c.cell_id] = read_trace(p)
    return ExperimentResult(exp, cells, traces, manifest.get("errors", {}), score(exp, cells, traces))
