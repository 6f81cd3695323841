"""Synthetic bilevel test problems with closed-form lower-level solutions.

Every upper objective is nonnegative, so f_low = 0 throughout. Lipschitz
constants that only hold locally are documented in ``meta.region``; the
region always contains the level set of the start box with some margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import BilevelProblem, ProblemMetadata, make_rng

N_STARTS = 5


def _sq(v):
    return float(np.dot(v, v))


def _rot(deg):
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def p1(n: int = 2) -> BilevelProblem:
    """f = |x|^2 + |y|^2, g = |z - x|^2, so y(x) = x and F = 2|x|^2."""
    return BilevelProblem(
        name="P1" if n == 2 else f"P1-{n}d",
        n_x=n, n_y=n,
        upper=lambda x, y: _sq(x) + _sq(y),
        lower=lambda x, z: _sq(z - x),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, dtype=float),
        analytic_F_grad=lambda x: 4.0 * np.asarray(x, float),
        meta=ProblemMetadata(L_f=5.0, L=4.0, L_F=4.0 * 2.5, c_g=2.0, L_g=2.0, f_low=0.0,
                             region="|y| <= 2.5"),
        start_box=(-np.ones(n), np.ones(n)),
        F_star=0.0, x_star=np.zeros(n),
        description="quadratic upper and lower level, y(x) = x",
    )


def p2() -> BilevelProblem:
    """Ill-conditioned lower map y(x) = A x with cond(A) = 100."""
    A = _rot(30.0) @ np.diag([10.0, 0.1])
    H = np.diag([1.0, 4.0])
    M = np.eye(2) + A.T @ A
    return BilevelProblem(
        name="P2", n_x=2, n_y=2,
        upper=lambda x, y: _sq(x) + _sq(y),
        lower=lambda x, z: float((z - A @ x) @ H @ (z - A @ x)),
        lower_grad_y=lambda x, z: 2.0 * H @ (z - A @ x),
        analytic_lower=lambda x: A @ np.asarray(x, float),
        analytic_F_grad=lambda x: 2.0 * M @ np.asarray(x, float),
        meta=ProblemMetadata(L_f=30.0, L=2.0 * 101.0, L_F=2.0 * 101.0 * 1.5, c_g=2.0, L_g=8.0,
                             f_low=0.0, region="|y| <= 15 (level set of the start box)"),
        start_box=(-np.ones(2), np.ones(2)),
        F_star=0.0, x_star=np.zeros(2),
        description="rotated ill-conditioned lower map, weighted lower quadratic",
    )


def _p3_shift(n):
    return np.array([0.25 if i % 2 == 0 else 1.0 for i in range(n)])


def p3(n: int = 2) -> BilevelProblem:
    """f = |x|_1 + |y - a|^2, g = |z - x|^2, so F = |x|_1 + |x - a|^2."""
    a = _p3_shift(n)
    xs = np.maximum(a - 0.5, 0.0)
    Fs = float(np.abs(xs).sum() + _sq(xs - a))
    return BilevelProblem(
        name="P3" if n == 2 else f"P3-{n}d",
        n_x=n, n_y=n,
        upper=lambda x, y: float(np.abs(x).sum()) + _sq(y - a),
        lower=lambda x, z: _sq(z - x),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, dtype=float),
        analytic_F_grad=lambda x: np.sign(x) + 2.0 * (np.asarray(x, float) - a),
        meta=ProblemMetadata(L_f=7.0, L=None, L_F=math.sqrt(n) + 7.0, c_g=2.0, L_g=2.0,
                             f_low=0.0, smooth_true_objective=False, region="|y - a| <= 3.5"),
        start_box=(-np.ones(n), np.ones(n)),
        F_star=Fs, x_star=xs,
        description="l1 upper term; minimizer on a kink when a_i < 1/2",
    )


def p4() -> BilevelProblem:
    """Rosenbrock (b = 10) in y, weighted quadratic lower level with y(x) = x."""
    W = np.array([1.0, 5.0])

    def rosen(y):
        return (1.0 - y[0]) ** 2 + 10.0 * (y[1] - y[0] ** 2) ** 2

    def grad(x):
        x = np.asarray(x, float)
        r = x[1] - x[0] ** 2
        return np.array([-2.0 * (1.0 - x[0]) - 40.0 * x[0] * r, 20.0 * r])

    return BilevelProblem(
        name="P4", n_x=2, n_y=2,
        upper=lambda x, y: float(rosen(y)),
        lower=lambda x, z: float(np.dot(W * (z - x), z - x)),
        lower_grad_y=lambda x, z: 2.0 * W * (z - x),
        analytic_lower=lambda x: np.array(x, dtype=float),
        analytic_F_grad=grad,
        meta=ProblemMetadata(L_f=5200.0, L=6000.0, L_F=5200.0, c_g=2.0, L_g=10.0, f_low=0.0,
                             region="level set F <= 42.5 of the start box, inflated by 1"),
        start_box=(np.array([-1.2, -0.5]), np.array([1.2, 1.5])),
        F_star=0.0, x_star=np.ones(2),
        description="curved valley upper level",
    )


def p5() -> BilevelProblem:
    """Box-constrained lower level; y(x) = clamp(x, [-2, 2]^2) is interior near the starts."""
    b = np.array([1.0, -0.5])
    lo, hi = -2.0 * np.ones(2), 2.0 * np.ones(2)

    def y_of(x):
        return np.clip(np.asarray(x, float), lo, hi)

    def grad(x):
        x = np.asarray(x, float)
        inside = (x > lo) & (x < hi)
        return 2.0 * (x - b) + 2.0 * np.where(inside, y_of(x), 0.0)

    return BilevelProblem(
        name="P5", n_x=2, n_y=2,
        upper=lambda x, y: _sq(x - b) + _sq(y),
        lower=lambda x, z: _sq(z - x),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        lower_box=(lo, hi),
        analytic_lower=y_of,
        analytic_F_grad=grad,
        meta=ProblemMetadata(L_f=4.0 * math.sqrt(2.0), L=4.0, L_F=20.0, c_g=2.0, L_g=2.0,
                             f_low=0.0, region="L holds inside the box, L_f on all of Z"),
        start_box=(-np.ones(2), np.ones(2)),
        F_star=0.625, x_star=b / 2.0,
        description="lower level constrained to a box containing the level set",
    )


def p6() -> BilevelProblem:
    """One-dimensional: f = (y - 1)^2 + x^2, g = (z - x)^2, F = 2x^2 - 2x + 1."""
    return BilevelProblem(
        name="P6", n_x=1, n_y=1,
        upper=lambda x, y: float((y[0] - 1.0) ** 2 + x[0] ** 2),
        lower=lambda x, z: float((z[0] - x[0]) ** 2),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, dtype=float),
        analytic_F_grad=lambda x: 4.0 * np.asarray(x, float) - 2.0,
        meta=ProblemMetadata(L_f=9.0, L=4.0, L_F=14.0, c_g=2.0, L_g=2.0, f_low=0.0,
                             region="y in [-3.5, 5.5]"),
        start_box=(np.array([-2.0]), np.array([2.0])),
        F_star=0.5, x_star=np.array([0.5]),
        description="hand-checkable one-dimensional problem",
    )


def _p7_data(n):
    Q = 2.0 * np.eye(n) - 0.5 * (np.eye(n, k=1) + np.eye(n, k=-1))
    t = np.array([(-1.0) ** i for i in range(n)])
    return Q, t


def p7(n: int = 5) -> BilevelProblem:
    """Coupled quadratic with y(x) = Q^-1 x.

    Solvers only ever see the gradient-descent oracle here; the closed form
    is kept for scoring and certification.
    """
    Q, t = _p7_data(n)
    Qi = np.linalg.inv(Q)
    lam = np.linalg.eigvalsh(Q)
    H = 2.0 * Qi @ Qi + 0.2 * np.eye(n)
    xs = np.linalg.solve(H, 2.0 * Qi @ t)
    Fs = float(_sq(Qi @ xs - t) + 0.1 * _sq(xs))
    return BilevelProblem(
        name="P7", n_x=n, n_y=n,
        upper=lambda x, y: _sq(y - t) + 0.1 * _sq(x),
        lower=lambda x, z: 0.5 * float((z - Qi @ x) @ Q @ (z - Qi @ x)),
        lower_grad_y=lambda x, z: Q @ (z - Qi @ x),
        analytic_lower=lambda x: Qi @ np.asarray(x, float),
        analytic_F_grad=lambda x: H @ np.asarray(x, float) - 2.0 * Qi @ t,
        meta=ProblemMetadata(L_f=10.0, L=float(np.linalg.eigvalsh(H).max()), L_F=20.0,
                             c_g=float(lam.min()), L_g=float(lam.max()), f_low=0.0,
                             region="|y - t| <= 5"),
        start_box=(-np.ones(n), np.ones(n)),
        F_star=Fs, x_star=xs,
        description="five-dimensional coupled quadratic, oracle-only for the solvers",
    )


def p8(n: int = 2) -> BilevelProblem:
    """Piecewise-linear: f = |y - b|_1 + 0.5|x|_1, g = |z - x|^2, minimizer x* = b."""
    b = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
    return BilevelProblem(
        name="P8" if n == 2 else f"P8-{n}d",
        n_x=n, n_y=n,
        upper=lambda x, y: float(np.abs(y - b).sum() + 0.5 * np.abs(x).sum()),
        lower=lambda x, z: _sq(z - x),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, dtype=float),
        analytic_F_grad=lambda x: np.sign(np.asarray(x, float) - b) + 0.5 * np.sign(x),
        meta=ProblemMetadata(L_f=math.sqrt(n), L=None, L_F=1.5 * math.sqrt(n), c_g=2.0, L_g=2.0,
                             f_low=0.0, smooth_true_objective=False, region="global"),
        start_box=(-2.0 * np.ones(n), 2.0 * np.ones(n)),
        F_star=0.5 * float(np.abs(b).sum()), x_star=b,
        description="piecewise-linear upper level with a kink at the minimizer",
    )


_FACTORIES = {"P1": p1, "P2": p2, "P3": p3, "P4": p4, "P5": p5, "P6": p6, "P7": p7, "P8": p8}


def suite() -> list:
    return [f() for f in _FACTORIES.values()]


def get_problem(problem_id: str) -> BilevelProblem:
    """Look up a suite problem; ``P3-1d`` style ids select other dimensions."""
    base, _, dim = problem_id.partition("-")
    if base not in _FACTORIES:
        raise KeyError(f"unknown problem {problem_id!r}")
    if not dim:
        return _FACTORIES[base]()
    if not dim.endswith("d") or base not in ("P1", "P3", "P7", "P8"):
        raise KeyError(f"unknown problem {problem_id!r}")
    return _FACTORIES[base](int(dim[:-1]))


@dataclass(frozen=True)
class ProblemInstance:
    problem_id: str
    start_id: int
    x0: np.ndarray
    n_p: int


def instances(problem: BilevelProblem, master_seed: int = 0, n_starts: int = N_STARTS) -> list:
    """Starting points drawn uniformly from the problem's start box."""
    rng = make_rng(master_seed, "starts", problem.name)
    lo, hi = problem.start_box
    return [ProblemInstance(problem.name, i, lo + (hi - lo) * rng.random(problem.n_x), problem.n_x)
            for i in range(n_starts)]


def start_point(problem: BilevelProblem, k: int, master_seed: int = 0) -> np.ndarray:
    return instances(problem, master_seed, max(N_STARTS, k + 1))[k].x0
