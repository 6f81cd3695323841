"""Inexact mesh-based direct search with simple decrease (a MADS variant).

The mesh size ``alpha``, the frame size ``Delta`` and the iterate itself are
kept as exact rationals; the objective is evaluated at the nearest double.
Poll directions are integer vectors, so with the default mesh
(G = I, Z = [I, -I]) every poll point lies on the current mesh exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import halton
from .core import (
    BilevelProblem,
    DirectionSet,
    EvalLedger,
    SolverConfig,
    as_fraction,
    cosine_measure,
    evaluate_reduced,
    make_rng,
)
from .errors import BudgetExhausted, DegenerateDirection, InvalidConfig, NonFiniteValue, UnsupportedMesh
from .trace import IterRecord, Trace

MAX_REDRAWS = 100
MESH_TOL = 1e-12


@dataclass
class MeshSpec:
    """The mesh {center + alpha * D y : y in N^p} with D = G Zcols."""

    center: object
    alpha: object
    G: Optional[np.ndarray] = None
    Zcols: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.center)
        if self.G is None:
            self.G = np.eye(n)
        if self.Zcols is None:
            self.Zcols = np.hstack([np.eye(n, dtype=int), -np.eye(n, dtype=int)])
        self.Zcols = np.asarray(self.Zcols)
        if not np.issubdtype(self.Zcols.dtype, np.integer):
            if np.any(self.Zcols != np.round(self.Zcols)):
                raise ValueError("Zcols must be integer valued")
            self.Zcols = self.Zcols.astype(int)

    @property
    def D(self) -> np.ndarray:
        return np.asarray(self.G, float) @ self.Zcols

    @property
    def is_default(self) -> bool:
        n = len(self.center)
        if not np.array_equal(np.asarray(self.G, float), np.eye(n)):
            return False
        cols = {tuple(c) for c in self.Zcols.T}
        return cols == {tuple(c) for c in np.hstack([np.eye(n, dtype=int), -np.eye(n, dtype=int)]).T}


def mesh_contains(spec: MeshSpec, point, tol: float = MESH_TOL) -> bool:
    """Whether ``point`` lies on the mesh, up to ``tol`` in mesh units.

    Offsets are formed exactly (floats convert to Fractions without loss)
    and only the distance of offset/alpha to the nearest integer is rounded
    to a double.
    """
    if not spec.is_default:
        raise UnsupportedMesh("membership is only decidable for the default mesh G=I, Z=[I,-I]")
    a = as_fraction(spec.alpha)
    for p, c in zip(point, spec.center):
        q = (as_fraction(p) - as_fraction(c)) / a
        if abs(float(q - round(q))) > tol:
            return False
    return True


@dataclass
class MeshState:
    x: list  # exact coordinates (Fractions)
    y: np.ndarray
    F_tilde: float
    alpha: Fraction
    Delta: Fraction
    k: int = 0
    halton_index: int = 1
    floor_failures: int = 0

    @property
    def x_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.x])


def _round_scaled(s: Fraction, u) -> list:
    return [round(s * Fraction(float(ui))) for ui in u]


def _mesh_set(ints) -> DirectionSet:
    # the float rows are rescaled: huge integers would overflow a double
    m = max(abs(v) for d in ints for v in d)
    rows = [[float(Fraction(v, m)) for v in d] for d in ints]
    return DirectionSet(np.array(rows), "mesh", integer_dirs=ints)


def integer_direction(Delta, alpha, u) -> list:
    """round((Delta / alpha) * u) as exact Python ints."""
    return _round_scaled(as_fraction(Delta) / as_fraction(alpha), u)


def update_mesh(Delta, alpha, success: bool, theta, alpha_min, smooth: bool) -> tuple:
    """Next (Delta, alpha) in exact arithmetic.

    Success enlarges the frame by 1/theta; failure shrinks it to
    max(alpha_min, theta Delta). The mesh size follows min(Delta, Delta^2)
    of the new frame, and in nonsmooth mode a failure also forces at least a
    theta-fold reduction of the old mesh size.
    """
    Delta, alpha = as_fraction(Delta), as_fraction(alpha)
    theta, alpha_min = as_fraction(theta), as_fraction(alpha_min)
    if success:
        D = Delta / theta
        return D, min(D, D * D)
    D = max(alpha_min, theta * Delta)
    if smooth:
        return D, min(D, D * D)
    return D, min(D, D * D, theta * alpha)


def gen_mesh_directions(state: MeshState, mode: str, k: int, rng) -> DirectionSet:
    """Integer poll directions with |alpha d| close to Delta.

    ``smooth``: the columns of a random orthogonal matrix and their negatives,
    scaled by Delta/alpha and rounded; a signed permutation of the coordinate
    basis is used if every redraw loses rank. ``nonsmooth``: one +-pair from
    the Halton sphere sequence (the index advances on every draw).
    """
    if state.alpha > state.Delta:
        raise ValueError("mesh size must not exceed frame size")
    n = len(state.x)
    s = state.Delta / state.alpha
    if mode == "nonsmooth":
        for _ in range(MAX_REDRAWS):
            u = halton.sphere_point(state.halton_index, n)
            state.halton_index += 1
            d = _round_scaled(s, u)
            if any(d):
                ints = [d, [-v for v in d]]
                return _mesh_set(ints)
        raise DegenerateDirection(f"no nonzero mesh direction after {MAX_REDRAWS} draws")
    if mode != "smooth":
        raise ValueError(f"unknown mesh mode {mode!r}")
    basis = None
    for _ in range(MAX_REDRAWS):
        Q, _r = np.linalg.qr(rng.standard_normal((n, n)))
        cols = [_round_scaled(s, Q[:, j]) for j in range(n)]
        if np.linalg.matrix_rank(_mesh_set(cols).dirs) == n:
            basis = cols
            break
    if basis is None:
        # signed permutation: always full rank, still scaled to the frame
        perm = rng.permutation(n)
        signs = rng.choice([-1, 1], size=n)
        m = max(1, round(s))
        basis = [[int(signs[j]) * m if i == perm[j] else 0 for i in range(n)] for j in range(n)]
    ints = basis + [[-v for v in b] for b in basis]
    return _mesh_set(ints)


def _finish(trace, ledger, reason):
    trace.termination = reason
    trace.upper_evals = ledger.upper_evals
    trace.lower_oracle_calls = ledger.lower_oracle_calls
    trace.lower_inner_iters = ledger.lower_inner_iters
    return trace


def run_mesh(problem: BilevelProblem, config: SolverConfig, x0, oracle,
             solver_name: str = "mesh-ds") -> Trace:
    """Run the mesh scheme with simple decrease.

    Smooth mode stops after two consecutive unsuccessful iterations at
    Delta = alpha_min; nonsmooth mode (and alpha_min = 0) runs until the
    budget or ``config.max_iter``.
    """
    config.validate()
    if config.direction_mode != "mesh":
        raise InvalidConfig("run_mesh needs direction_mode='mesh'")
    mode = "smooth" if config.smooth_mode else "nonsmooth"
    theta = config.theta
    alpha_min = as_fraction(config.alpha_min)
    x0 = np.asarray(x0, dtype=float).reshape(problem.n_x)
    rng = make_rng(config.seed, "mesh-directions")
    ledger = EvalLedger(config.budget)
    trace = Trace(problem.name, solver_name, config,
                  oracle.describe() if hasattr(oracle, "describe") else {}, x0.copy())

    y, F = evaluate_reduced(problem, x0, oracle, ledger)
    a0 = as_fraction(config.alpha_0)
    state = MeshState([Fraction(float(v)) for v in x0], y, F, a0, a0)
    trace.rows.append(IterRecord(0, ledger.upper_evals, False, float(a0), F, x0.copy(),
                                 Delta=float(a0), Delta_exact=a0))
    reason = None
    while reason is None:
        if state.k >= config.max_iter:
            reason = "max_iter"
            break
        try:
            dirs = gen_mesh_directions(state, mode, state.k, rng)
        except DegenerateDirection:
            reason = "degenerate"
            break
        state.k += 1
        alpha, Delta = state.alpha, state.Delta
        spec = MeshSpec(state.x, alpha)
        steps = [[alpha * v for v in d] for d in dirs.integer_dirs]
        sq = [sum(v * v for v in st) for st in steps]
        norms = [math.sqrt(float(q)) for q in sq]
        b1 = math.sqrt(float(min(sq) / Delta ** 2))
        b2 = math.sqrt(float(max(sq) / Delta ** 2))
        kappa = cosine_measure(dirs)
        points = [[xi + si for xi, si in zip(state.x, st)] for st in steps]
        floats = [np.array([float(v) for v in p]) for p in points]
        xf = state.x_float
        if all(np.array_equal(pf, xf) for pf in floats):
            # the frame is below double resolution around x
            reason = "underflow"
            break

        success = None
        try:
            for p, pf in zip(points, floats):
                trace.mesh_checks += 1
                if not mesh_contains(spec, p):
                    trace.mesh_failures += 1
                try:
                    yp, Fp = evaluate_reduced(problem, pf, oracle, ledger)
                except NonFiniteValue:
                    continue
                # simple decrease: any strict improvement
                if Fp < state.F_tilde:
                    success = (p, pf, yp, Fp)
                    break
        except BudgetExhausted:
            reason = "budget"
            break

        rec = dict(Delta=float(Delta), Delta_exact=Delta, b1=b1, b2=b2, kappa=kappa, poll_norms=norms)
        if success is not None:
            p, pf, yp, Fp = success
            state.x, state.y, state.F_tilde = p, yp, Fp
            state.floor_failures = 0
            trace.rows.append(IterRecord(state.k, ledger.upper_evals, True, float(alpha), Fp, pf, **rec))
        else:
            trace.rows.append(IterRecord(state.k, ledger.upper_evals, False, float(alpha),
                                         state.F_tilde, state.x_float, **rec))
            if alpha_min > 0 and Delta == alpha_min:
                state.floor_failures += 1
            else:
                state.floor_failures = 0
            if mode == "smooth" and alpha_min > 0 and state.floor_failures >= 2:
                reason = "floor"
        state.Delta, state.alpha = update_mesh(Delta, alpha, success is not None, theta, alpha_min,
                                               mode == "smooth")
        if not state.alpha <= state.Delta:
            raise AssertionError("mesh size exceeded frame size")
    return _finish(trace, ledger, reason)
