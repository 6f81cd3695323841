"""Fixed-accuracy lower-level oracles returning y_tilde with |y_tilde - y(x)| <= eps."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .core import BilevelProblem
from .errors import MissingAnalyticLower, NonFiniteValue

DEFAULT_MAX_INNER = 1_000_000


@dataclass
class OracleReport:
    y_tilde: np.ndarray
    inner_iters: int
    final_grad_norm: float
    cap_K: int
    converged_by: str  # "grad_threshold", "iter_cap" or "analytic"


def iteration_cap(L_g: float, c_g: float, gap: float, eps: float) -> int:
    """Worst-case number of gradient steps K = ceil(2 L_g gap / (eps^2 c_g^2))."""
    if gap <= 0:
        return 0
    return int(math.ceil(2.0 * L_g * gap / (eps * eps * c_g * c_g)))


def gd_oracle(problem: BilevelProblem, x, eps: float, y0=None, g_lb: float = 0.0,
              max_inner: int = DEFAULT_MAX_INNER) -> OracleReport:
    """Projected gradient descent on g(x, .) with step 1/L_g.

    Stops once the gradient-mapping norm drops to c_g * eps, or after the
    K(x) cap, and returns the visited iterate with the smallest norm. On an
    unconstrained problem the gradient mapping is the gradient itself.
    """
    L_g, c_g = problem.meta.require("L_g", "c_g")
    if not eps > 0:
        raise ValueError("eps must be positive for the gradient-descent oracle")
    x = np.asarray(x, dtype=float)
    lo, hi = problem.lower_box
    if y0 is None:
        y = problem.default_y0()
    else:
        y = np.asarray(y0, dtype=float)
        if np.any(y < lo) or np.any(y > hi):
            raise ValueError("y0 lies outside the feasible box")
    gap = float(problem.lower(x, y)) - g_lb
    if not math.isfinite(gap):
        raise NonFiniteValue(f"lower objective is not finite at x={x}")
    cap = min(iteration_cap(L_g, c_g, gap, eps), max_inner)
    thresh = c_g * eps
    inv = 1.0 / L_g
    free = problem.box_is_unbounded

    best_y, best_norm = y, math.inf
    converged = "iter_cap"
    k = 0
    while True:
        grad = problem.lower_grad_y(x, y)
        if free:
            step = y - inv * grad
            gm = math.sqrt(float(np.dot(grad, grad)))
        else:
            step = np.clip(y - inv * grad, lo, hi)
            gm = L_g * math.sqrt(float(np.dot(y - step, y - step)))
        if not math.isfinite(gm):
            raise NonFiniteValue(f"non-finite lower gradient at x={x}")
        if gm < best_norm:
            best_y, best_norm = y, gm
        if gm <= thresh:
            converged = "grad_threshold"
            break
        if k >= cap:
            break
        y = step
        k += 1
    return OracleReport(best_y, k, best_norm, cap, converged)


def _unit_from_bits(x: np.ndarray, n: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(np.ascontiguousarray(x, dtype=float).tobytes(),
                             digest_size=16, key=int(seed).to_bytes(8, "little", signed=False)).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    while True:
        u = rng.standard_normal(n)
        nu = np.linalg.norm(u)
        if nu > 1e-12:
            return u / nu


def injected_error_oracle(problem: BilevelProblem, x, eps: float, seed: int = 0) -> OracleReport:
    """y(x) + eps * u(x) with u a deterministic unit vector hashed from x's bits.

    The error has norm exactly eps (up to rounding), the worst magnitude the
    accuracy contract allows.
    """
    if problem.analytic_lower is None:
        raise MissingAnalyticLower(f"problem {problem.name} has no analytic lower solution")
    if not eps >= 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    y = np.asarray(problem.analytic_lower(x), dtype=float)
    if eps > 0:
        y = y + eps * _unit_from_bits(x, problem.n_y, seed)
    g = problem.lower_grad_y(x, y)
    return OracleReport(y, 0, float(np.linalg.norm(g)), 0, "analytic")


class GradientDescentOracle:
    """Callable wrapper around :func:`gd_oracle` used by the solvers."""

    warm_start = True
    kind = "gd"

    def __init__(self, eps: float, g_lb: float = 0.0, max_inner: int = DEFAULT_MAX_INNER):
        self.eps = float(eps)
        self.g_lb = g_lb
        self.max_inner = max_inner

    def __call__(self, problem, x, y0=None):
        if y0 is not None:
            y0 = problem.project(y0)
        return gd_oracle(problem, x, self.eps, y0=y0, g_lb=self.g_lb, max_inner=self.max_inner)

    def describe(self):
        return {"kind": self.kind, "eps": self.eps}


class InjectedErrorOracle:
    warm_start = False
    kind = "injected"

    def __init__(self, eps: float, seed: int = 0):
        self.eps = float(eps)
        self.seed = int(seed)

    def __call__(self, problem, x, y0=None):
        return injected_error_oracle(problem, x, self.eps, seed=self.seed)

    def describe(self):
        return {"kind": self.kind, "eps": self.eps, "seed": self.seed}


class ExactOracle(InjectedErrorOracle):
    kind = "exact"

    def __init__(self):
        super().__init__(0.0)

    def describe(self):
        return {"kind": self.kind, "eps": 0.0}


def make_oracle(kind: str, eps: float, seed: int = 0):
    if kind == "gd":
        return GradientDescentOracle(eps)
    if kind == "injected":
        return InjectedErrorOracle(eps, seed=seed)
    if kind == "exact":
        return ExactOracle()
    raise ValueError(f"unknown oracle kind {kind!r}")
