"""Inexact directional direct search with sufficient decrease.

Three direction modes: ``coordinate`` ({±e_i}), ``random`` (one random
±pair per iteration) and ``dense`` (±pair from a Halton sequence dense in
the unit sphere, intended for nonsmooth objectives). Successful polls are
followed by an extrapolation along the successful direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import halton
from .core import (
    BilevelProblem,
    DirectionSet,
    EvalLedger,
    SolverConfig,
    decrease_accepted,
    evaluate_reduced,
    make_rng,
)
from .errors import BudgetExhausted, InvalidConfig, NonFiniteValue
from .trace import IterRecord, Trace

__all__ = [
    "DirectionSet",
    "DirectionalState",
    "PollOutcome",
    "gen_directions",
    "poll",
    "extrapolate",
    "run_directional",
]

MAX_EXPANSIONS = 200


@dataclass
class DirectionalState:
    x: np.ndarray
    y: np.ndarray
    F_tilde: float
    alpha: float
    k: int = 0
    consecutive_floor_failures: int = 0


@dataclass
class PollOutcome:
    success: bool
    d: Optional[np.ndarray] = None
    x_new: Optional[np.ndarray] = None
    y_new: Optional[np.ndarray] = None
    F_new: Optional[float] = None


def gen_directions(mode: str, n_x: int, k: int, rng) -> DirectionSet:
    """Poll directions for iteration ``k`` (0-based)."""
    if n_x < 1:
        raise ValueError("n_x must be >= 1")
    if mode == "coordinate":
        eye = np.eye(n_x)
        return DirectionSet(np.vstack([eye, -eye]), mode, kappa_hint=1.0 / math.sqrt(n_x))
    if mode == "random":
        v = rng.standard_normal(n_x)
        v /= np.linalg.norm(v)
        return DirectionSet(np.vstack([v, -v]), mode, kappa_hint=1.0 if n_x == 1 else 0.0)
    if mode == "dense":
        h = halton.sphere_point(k + 1, n_x)
        return DirectionSet(np.vstack([h, -h]), mode, kappa_hint=1.0 if n_x == 1 else 0.0)
    raise ValueError(f"unknown directional mode {mode!r}")


def poll(state: DirectionalState, problem: BilevelProblem, oracle, config: SolverConfig,
         dirs: DirectionSet, ledger: EvalLedger) -> PollOutcome:
    """Opportunistic poll: first direction giving sufficient decrease wins.

    Raises BudgetExhausted if the budget runs out before every direction was
    tried. A non-finite objective value counts as a failed direction.
    """
    for d in dirs:
        t = state.x + state.alpha * d
        try:
            y, F = evaluate_reduced(problem, t, oracle, ledger)
        except NonFiniteValue:
            continue
        if decrease_accepted(F, state.F_tilde, state.alpha, "sufficient", config.c):
            return PollOutcome(True, d, t, y, F)
    return PollOutcome(False)


def extrapolate(state: DirectionalState, problem: BilevelProblem, oracle, config: SolverConfig,
                d: np.ndarray, ledger: EvalLedger):
    """Expand the step along a successful direction while decrease persists.

    Tests x + gamma^j alpha d for j = 1, 2, ... against the last accepted
    point with stepsize gamma^j alpha. Returns ``(x, y, F, alpha_out, j*)``.
    On budget exhaustion the raised BudgetExhausted carries the best point.
    """
    alpha = state.alpha
    best_x = state.x + alpha * d
    best_y, best_F = evaluate_reduced(problem, best_x, oracle, ledger)
    j_star = 0
    gamma = float(config.gamma)
    if gamma > 1:
        for j in range(1, MAX_EXPANSIONS + 1):
            a = gamma ** j * alpha
            t = state.x + a * d
            if not (math.isfinite(a) and np.all(np.isfinite(t))):
                break
            try:
                y, F = evaluate_reduced(problem, t, oracle, ledger)
            except NonFiniteValue:
                break
            except BudgetExhausted as exc:
                best = (best_x, best_y, best_F, gamma ** j_star * alpha, j_star)
                raise BudgetExhausted(str(exc), best=best) from exc
            if not decrease_accepted(F, best_F, a, "sufficient", config.c):
                break
            best_x, best_y, best_F, j_star = t, y, F, j
    return best_x, best_y, best_F, gamma ** j_star * alpha, j_star


def run_directional(problem: BilevelProblem, config: SolverConfig, x0, oracle,
                    extrapolation: bool = True, solver_name: Optional[str] = None) -> Trace:
    """Run the directional scheme until the stepsize floor, budget or cap.

    Floor termination (coordinate/random modes, alpha_min > 0): two
    consecutive unsuccessful iterations polled at alpha = alpha_min. Dense
    mode keeps polling new directions at the floor and stops at the budget
    or ``config.max_iter``, unless a floor poll needed no fresh evaluation
    (in one dimension every direction repeats, so nothing can change).
    """
    config.validate()
    mode = config.direction_mode
    if mode not in ("coordinate", "random", "dense"):
        raise InvalidConfig(f"run_directional cannot use direction mode {mode!r}")
    x0 = np.asarray(x0, dtype=float).reshape(problem.n_x)
    rng = make_rng(config.seed, "directions")
    ledger = EvalLedger(config.budget)
    theta = float(config.theta)
    alpha_min = float(config.alpha_min)
    trace = Trace(problem.name, solver_name or f"{mode}-ds", config,
                  oracle.describe() if hasattr(oracle, "describe") else {}, x0.copy())

    y, F = evaluate_reduced(problem, x0, oracle, ledger)
    state = DirectionalState(x0.copy(), y, F, float(config.alpha_0))
    trace.rows.append(IterRecord(0, ledger.upper_evals, False, state.alpha, F, x0.copy()))
    reason = None
    while reason is None:
        if state.k >= config.max_iter:
            reason = "max_iter"
            break
        if state.alpha <= 0:
            reason = "underflow"
            break
        dirs = gen_directions(mode, problem.n_x, state.k, rng)
        state.k += 1
        evals_before = ledger.upper_evals
        try:
            out = poll(state, problem, oracle, config, dirs, ledger)
        except BudgetExhausted:
            reason = "budget"
            break
        alpha_k = state.alpha
        if out.success:
            j_star = 0
            try:
                if extrapolation:
                    x_new, y_new, F_new, alpha_next, j_star = extrapolate(
                        state, problem, oracle, config, out.d, ledger)
                else:
                    x_new, y_new, F_new, alpha_next = out.x_new, out.y_new, out.F_new, alpha_k
            except BudgetExhausted as exc:
                x_new, y_new, F_new, alpha_next, j_star = exc.best
                reason = "budget"
            state.x, state.y, state.F_tilde = x_new, y_new, F_new
            state.alpha = alpha_next
            state.consecutive_floor_failures = 0
            trace.rows.append(IterRecord(state.k, ledger.upper_evals, True, alpha_k, F_new,
                                         x_new.copy(), expansions=j_star, kappa=dirs.kappa_hint))
        else:
            trace.rows.append(IterRecord(state.k, ledger.upper_evals, False, alpha_k,
                                         state.F_tilde, state.x.copy(), kappa=dirs.kappa_hint))
            if alpha_min > 0 and alpha_k == alpha_min:
                state.consecutive_floor_failures += 1
            else:
                state.consecutive_floor_failures = 0
            state.alpha = max(alpha_min, theta * alpha_k)
            if mode != "dense" and alpha_min > 0 and state.consecutive_floor_failures >= 2:
                reason = "floor"
            elif mode == "dense" and alpha_k == alpha_min and ledger.upper_evals == evals_before:
                reason = "floor"

    trace.termination = reason
    trace.upper_evals = ledger.upper_evals
    trace.lower_oracle_calls = ledger.lower_oracle_calls
    trace.lower_inner_iters = ledger.lower_inner_iters
    return trace
