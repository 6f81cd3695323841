"""Convergence test and performance/data profiles over evaluation counts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INF = math.inf


def convergence_eval_count(trace, F_low_best: float, tol: float) -> float:
    """Upper-level evaluations spent when the trace first meets

        F_tilde(x_k) <= F_low + tol * (F_tilde(x_0) - F_low),

    or ``inf`` if it never does.
    """
    if not trace.rows:
        raise ValueError("empty trace")
    thresh = F_low_best + tol * (trace.F0 - F_low_best)
    for r in trace.rows:
        if r.F_tilde <= thresh:
            return r.upper_evals
    return INF


@dataclass
class ProfileTable:
    """Evaluation counts t[p, s] (inf = unsolved) and the derived profiles.

    ``rho`` and ``d`` map a solver to a step function given as
    ``(breakpoints, values)``: the profile equals ``values[i]`` on
    ``[breakpoints[i], breakpoints[i + 1])`` and 0 left of the first break.
    """

    t: np.ndarray
    instances: list
    solvers: list
    n_p: np.ndarray
    tol: float
    lltol: float = None
    dropped: list = field(default_factory=list)
    rho: dict = field(default_factory=dict)
    d: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(len(self.instances), len(self.solvers))
        self.n_p = np.asarray(self.n_p, dtype=float)

    @property
    def solved_fraction(self) -> np.ndarray:
        if len(self.instances) == 0:
            return np.zeros(len(self.solvers))
        return np.isfinite(self.t).mean(axis=0)

    def ratios(self) -> np.ndarray:
        # counts below one (never produced by a real trace) would give t / 0
        t = np.maximum(self.t, 1.0)
        best = t.min(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(t), t / best, INF)

    def rho_at(self, solver, gamma) -> float:
        j = self.solvers.index(solver)
        if not len(self.instances):
            return 0.0
        return float(np.mean(self.ratios()[:, j] <= gamma))

    def d_at(self, solver, kappa) -> float:
        j = self.solvers.index(solver)
        if not len(self.instances):
            return 0.0
        return float(np.mean(self.t[:, j] <= kappa * (self.n_p + 1)))


def _step(values: np.ndarray, n: int):
    v = np.sort(values[np.isfinite(values)])
    if v.size == 0:
        return np.array([]), np.array([])
    breaks, counts = np.unique(v, return_counts=True)
    return breaks, np.cumsum(counts) / n


def drop_unsolved(table: ProfileTable) -> ProfileTable:
    keep = np.isfinite(table.t).any(axis=1)
    dropped = [p for p, k in zip(table.instances, keep) if not k]
    return ProfileTable(table.t[keep], [p for p, k in zip(table.instances, keep) if k],
                        list(table.solvers), table.n_p[keep], table.tol, table.lltol,
                        list(table.dropped) + dropped)


def performance_profile(table: ProfileTable) -> ProfileTable:
    n = len(table.instances)
    r = table.ratios()
    table.rho = {s: _step(r[:, j], n) for j, s in enumerate(table.solvers)}
    return table


def data_profile(table: ProfileTable) -> ProfileTable:
    n = len(table.instances)
    with np.errstate(invalid="ignore"):
        k = table.t / (table.n_p[:, None] + 1)
    table.d = {s: _step(k[:, j], n) for j, s in enumerate(table.solvers)}
    return table


def build_table(t, instances, solvers, n_p, tol, lltol=None) -> ProfileTable:
    """Drop instances nobody solved, then fill both profiles."""
    table = drop_unsolved(ProfileTable(t, list(instances), list(solvers), n_p, tol, lltol))
    return data_profile(performance_profile(table))


def eval_step(fn, x: float) -> float:
    breaks, vals = fn
    i = np.searchsorted(breaks, x, side="right")
    return 0.0 if i == 0 else float(vals[i - 1])


def check_axioms(table: ProfileTable, atol: float = 1e-12) -> None:
    """Raise AssertionError if the profiles break monotonicity or limits."""
    frac = table.solved_fraction
    for j, s in enumerate(table.solvers):
        for name, fn in (("rho", table.rho[s]), ("d", table.d[s])):
            breaks, vals = fn
            assert np.all(np.diff(breaks) > 0), f"{name}_{s}: breakpoints not increasing"
            assert np.all(np.diff(vals) >= 0), f"{name}_{s}: not nondecreasing"
            assert np.all((vals >= 0) & (vals <= 1 + atol)), f"{name}_{s}: outside [0, 1]"
            last = vals[-1] if len(vals) else 0.0
            assert abs(last - frac[j]) <= atol, f"{name}_{s}: limit {last} != solved fraction {frac[j]}"
        if len(table.rho[s][0]):
            assert table.rho[s][0][0] >= 1.0, f"rho_{s}: ratio below 1"
    if len(table.instances):
        winners = (table.ratios() == 1.0).any(axis=1)
        assert winners.all(), "some solved instance has no solver at ratio 1"
        at_one = sum(eval_step(table.rho[s], 1.0) for s in table.solvers)
        assert at_one >= 1.0 - atol, "performance profiles at gamma = 1 do not cover the instances"
