"""Command-line interface: ``bds list | run | bench | profiles | certify``.

Exit codes: 0 clean finish (or certificate passed), 1 error, 2 budget
exhausted before the stopping test fired, 3 certificate inconclusive.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench.experiment import ExperimentConfig, load_experiment, run_experiment, write_outputs
from .bench.problems import get_problem, start_point, suite
from .core import SolverConfig, as_fraction
from .errors import BilevelError
from .lower_level import make_oracle
from .solvers import SOLVERS, default_config, run_solver
from .stationarity import goldstein_certify, goldstein_targets
from .trace import fmt, read_trace

EXIT_OK, EXIT_ERROR, EXIT_BUDGET, EXIT_INCONCLUSIVE = 0, 1, 2, 3

log = logging.getLogger("bilevel_ds")


class CliError(Exception):
    pass


@dataclass
class RunSpec:
    problem_id: str
    solver_id: str = "coordinate-ds"
    x0: str = "start:0"
    eps_oracle: float = 1e-6
    oracle: str = "auto"
    budget: int = 500
    seed: int = 0
    out_path: str = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise CliError("unknown run-spec keys: " + ", ".join(sorted(unknown)))
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def oracle_kind(self) -> str:
        if self.oracle != "auto":
            return self.oracle
        return "exact" if self.eps_oracle == 0 else "gd"


def parse_x0(text: str, problem) -> np.ndarray:
    if text.startswith("start:"):
        return start_point(problem, int(text.split(":", 1)[1]))
    x0 = np.array([float(v) for v in text.replace(" ", "").split(",") if v], dtype=float)
    if x0.shape != (problem.n_x,):
        raise CliError(f"x0 needs {problem.n_x} comma-separated values, got {text!r}")
    return x0


def parse_value(v: str):
    try:
        return json.loads(v)
    except json.JSONDecodeError:
        return v


def parse_overrides(pairs) -> dict:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise CliError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def resolve_config(spec: RunSpec, problem) -> SolverConfig:
    names = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(spec.overrides) - names
    if unknown:
        raise CliError("unknown config keys: " + ", ".join(sorted(unknown)))
    ov = dict(spec.overrides)
    if "theta" in ov:
        ov["theta"] = as_fraction(str(ov["theta"]))
    ov.update(eps_oracle=spec.eps_oracle, budget=spec.budget, seed=spec.seed)
    return default_config(spec.solver_id, problem, **ov).validate()


def execute(spec: RunSpec):
    if spec.solver_id not in SOLVERS:
        raise CliError(f"unknown solver {spec.solver_id!r}; choose from {', '.join(SOLVERS)}")
    try:
        problem = get_problem(spec.problem_id)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from exc
    cfg = resolve_config(spec, problem)
    x0 = parse_x0(spec.x0, problem)
    oracle = make_oracle(spec.oracle_kind(), spec.eps_oracle, seed=spec.seed)
    trace = run_solver(spec.solver_id, problem, cfg, x0, oracle)
    return problem, cfg, trace


def summary(spec: RunSpec, cfg: SolverConfig, trace) -> dict:
    fin = trace.final
    return {
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "config": cfg.to_dict(),
        "termination": trace.termination,
        "x_final": [fmt(v) for v in fin.x],
        "F_tilde_final": fmt(fin.F_tilde),
        "iterations": trace.n_iterations,
        "successes": trace.n_successes,
        "upper_evals": trace.upper_evals,
        "lower_oracle_calls": trace.lower_oracle_calls,
        "lower_inner_iters": trace.lower_inner_iters,
    }


def cmd_list(args) -> int:
    rows = sorted(suite(), key=lambda p: p.name)
    print(f"{'problem':<8}{'n_x':>4}{'n_y':>5}  {'smooth':<7}{'F*':>12}  description")
    for p in rows:
        fs = "" if p.F_star is None else f"{p.F_star:.6g}"
        smooth = "yes" if p.meta.smooth_true_objective else "no"
        print(f"{p.name:<8}{p.n_x:>4}{p.n_y:>5}  {smooth:<7}{fs:>12}  {p.description}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.spec:
        spec = RunSpec.from_dict(json.loads(Path(args.spec).read_text())["spec"])
        if args.out:
            spec.out_path = args.out
    else:
        if not args.problem:
            raise CliError("--problem is required")
        spec = RunSpec(args.problem, args.solver, args.x0, args.eps, args.oracle, args.budget,
                       args.seed, args.out, parse_overrides(args.set))
    problem, cfg, trace = execute(spec)
    out = Path(spec.out_path or f"runs/{spec.problem_id}_{spec.solver_id}_{spec.seed}")
    trace.write_csv(out / "trace.csv")
    summ = summary(spec, cfg, trace)
    (out / "summary.json").write_text(json.dumps(summ, indent=2) + "\n")
    print(f"{problem.name} {spec.solver_id}: {trace.termination} after {trace.upper_evals} evaluations, "
          f"F_tilde = {fmt(trace.final.F_tilde)}")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    return EXIT_BUDGET if trace.termination == "budget" else EXIT_OK


def cmd_bench(args) -> int:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    exp = ExperimentConfig.from_dict(d)
    res = run_experiment(exp, out_dir=args.out, jobs=args.jobs)
    n = len(res.cells)
    print(f"{n - len(res.errors)}/{n} cells finished; outputs in {args.out}")
    for (ll, tol), t in sorted(res.tables.items()):
        solved = ", ".join(f"{s}={f:.2f}" for s, f in zip(t.solvers, t.solved_fraction))
        print(f"  LL_tol={ll:g} tol={tol:g}: solved {solved}; dropped {len(t.dropped)}")
    return EXIT_ERROR if n and len(res.errors) == n else EXIT_OK


def cmd_profiles(args) -> int:
    res = load_experiment(args.dir)
    write_outputs(res, args.out or args.dir)
    print(f"rescored {len(res.traces)} traces into {args.out or args.dir}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.samples < 1:
        raise CliError("--samples must be at least 1")
    trace = read_trace(args.trace)
    problem = get_problem(trace.problem_id)
    cfg = trace.config
    delta, eps_t = args.delta, args.epsilon
    if delta is None or eps_t is None:
        L_f = problem.meta.require("L_f")
        eps = float(trace.oracle.get("eps", cfg.eps_oracle))
        c = 0.0 if cfg.direction_mode == "mesh" else cfg.c
        d0, e0 = goldstein_targets(L_f, eps, float(cfg.alpha_min), c)
        delta = d0 if delta is None else delta
        eps_t = e0 if eps_t is None else eps_t
    rng = np.random.default_rng(args.seed)
    grad = "analytic_subgrad" if args.grad == "analytic" else "finite_difference"
    cert = goldstein_certify(problem, trace.final.x, delta, eps_t, args.samples, rng, grad)
    d = cert.to_dict()
    d["seed"] = args.seed
    d["trace"] = str(args.trace)
    text = json.dumps(d, indent=2) + "\n"
    out = Path(args.out) if args.out else Path(args.trace).with_suffix(".cert.json")
    out.write_text(text)
    print(f"witness norm {cert.witness_norm:.3g} vs target {eps_t:.3g} (delta {delta:.3g}): {cert.verdict}")
    return EXIT_OK if cert.passed else EXIT_INCONCLUSIVE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bds", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list the test problems").set_defaults(func=cmd_list)

    r = sub.add_parser("run", help="solve one problem")
    r.add_argument("--problem")
    r.add_argument("--solver", default="coordinate-ds")
    r.add_argument("--x0", default="start:0", help="comma-separated values or start:<k>")
    r.add_argument("--eps", type=float, default=1e-6, help="lower-level accuracy")
    r.add_argument("--oracle", default="auto", choices=["auto", "gd", "injected", "exact"])
    r.add_argument("--budget", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="solver config override")
    r.add_argument("--spec", help="replay the run spec stored in a summary.json")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run the benchmark experiment")
    b.add_argument("config", nargs="?", help="JSON experiment config (empty = defaults)")
    b.add_argument("--out", default="bench_out")
    b.add_argument("--jobs", type=int, help="worker processes (default: BDS_JOBS or all cores)")
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("profiles", help="rescore an experiment directory from its traces")
    p.add_argument("dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profiles)

    c = sub.add_parser("certify", help="Goldstein certificate for a trace's last iterate")
    c.add_argument("trace")
    c.add_argument("--delta", type=float)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--samples", type=int, default=64)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--grad", choices=["fd", "analytic"], default="fd")
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, BilevelError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
