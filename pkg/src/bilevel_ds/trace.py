"""Iteration traces and their CSV serialization."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .core import SolverConfig

MESH_COLUMNS = ["Delta", "Delta_exact", "b1", "b2", "kappa_realized"]


def fmt(v: float) -> str:
    return "%.17g" % v


@dataclass
class IterRecord:
    """State after iteration ``k``; row 0 is the starting point.

    ``alpha`` (and ``Delta`` for mesh runs) are the values used by the poll
    of iteration ``k``. After an unsuccessful iteration ``x`` is also the
    point that was polled around.
    """

    k: int
    upper_evals: int
    success: bool
    alpha: float
    F_tilde: float
    x: np.ndarray
    expansions: int = 0
    Delta: Optional[float] = None
    Delta_exact: Optional[Fraction] = None
    b1: Optional[float] = None
    b2: Optional[float] = None
    kappa: Optional[float] = None
    poll_norms: Optional[list] = None


@dataclass
class Trace:
    problem_id: str
    solver: str
    config: SolverConfig
    oracle: dict
    x0: np.ndarray
    rows: list = field(default_factory=list)
    termination: str = ""
    upper_evals: int = 0
    lower_oracle_calls: int = 0
    lower_inner_iters: int = 0
    mesh_checks: int = 0
    mesh_failures: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def is_mesh(self) -> bool:
        return self.config.direction_mode == "mesh"

    @property
    def F0(self) -> float:
        return self.rows[0].F_tilde

    @property
    def final(self) -> IterRecord:
        return self.rows[-1]

    @property
    def n_iterations(self) -> int:
        return len(self.rows) - 1

    @property
    def n_successes(self) -> int:
        return sum(1 for r in self.rows[1:] if r.success)

    @property
    def n_expansions(self) -> int:
        return sum(r.expansions for r in self.rows[1:])

    @property
    def best_F(self) -> float:
        return min(r.F_tilde for r in self.rows)

    def header(self) -> dict:
        return {
            "problem": self.problem_id,
            "solver": self.solver,
            "n_x": int(len(self.x0)),
            "config": self.config.to_dict(),
            "oracle": self.oracle,
            "x0": [fmt(v) for v in self.x0],
            "termination": self.termination,
            "upper_evals": self.upper_evals,
            "lower_oracle_calls": self.lower_oracle_calls,
            "lower_inner_iters": self.lower_inner_iters,
            "n_successes": self.n_successes,
            "n_expansions": self.n_expansions,
            "mesh_checks": self.mesh_checks,
            "mesh_failures": self.mesh_failures,
            **self.extra,
        }

    def columns(self) -> list:
        cols = ["k", "upper_evals", "success", "alpha", "F_tilde"]
        cols += [f"x_{i + 1}" for i in range(len(self.x0))]
        cols += MESH_COLUMNS if self.is_mesh else ["expansions"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            row = [r.k, r.upper_evals, int(r.success), fmt(r.alpha), fmt(r.F_tilde)]
            row += [fmt(v) for v in r.x]
            if self.is_mesh:
                row += [
                    fmt(r.Delta),
                    f"{r.Delta_exact.numerator}/{r.Delta_exact.denominator}",
                    "" if r.b1 is None else fmt(r.b1),
                    "" if r.b2 is None else fmt(r.b2),
                    "" if r.kappa is None else fmt(r.kappa),
                ]
            else:
                row.append(r.expansions)
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path


def _opt(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def read_trace(path) -> Trace:
    text = Path(path).read_text()
    first, rest = text.split("\n", 1)
    if not first.startswith("# "):
        raise ValueError(f"{path}: missing trace header line")
    head = json.loads(first[2:])
    reader = csv.DictReader(io.StringIO(rest))
    n = head["n_x"]
    rows = []
    for rec in reader:
        x = np.array([float(rec[f"x_{i + 1}"]) for i in range(n)])
        r = IterRecord(int(rec["k"]), int(rec["upper_evals"]), rec["success"] == "1",
                       float(rec["alpha"]), float(rec["F_tilde"]), x)
        if "Delta" in rec:
            r.Delta = float(rec["Delta"])
            r.Delta_exact = Fraction(rec["Delta_exact"])
            r.b1, r.b2, r.kappa = _opt(rec["b1"]), _opt(rec["b2"]), _opt(rec["kappa_realized"])
        else:
            r.expansions = int(rec["expansions"])
        rows.append(r)
    known = {"problem", "solver", "n_x", "config", "oracle", "x0", "termination", "upper_evals",
             "lower_oracle_calls", "lower_inner_iters", "n_successes", "n_expansions",
             "mesh_checks", "mesh_failures"}
    return Trace(
        problem_id=head["problem"],
        solver=head["solver"],
        config=SolverConfig.from_dict(head["config"]),
        oracle=head["oracle"],
        x0=np.array([float(v) for v in head["x0"]]),
        rows=rows,
        termination=head["termination"],
        upper_evals=head["upper_evals"],
        lower_oracle_calls=head["lower_oracle_calls"],
        lower_inner_iters=head["lower_inner_iters"],
        mesh_checks=head["mesh_checks"],
        mesh_failures=head["mesh_failures"],
        extra={k: v for k, v in head.items() if k not in known},
    )
