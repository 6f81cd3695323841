"""A-posteriori stationarity checks for solver output.

Smooth problems: closed-form gradient-norm bounds at unsuccessful
iterations and at termination. Nonsmooth problems: a sampled
(delta, eps)-Goldstein certificate built from the min-norm point of the
convex hull of gradients sampled in a ball.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BilevelProblem, ProblemMetadata, SolverConfig
from .errors import EmptyInput, MissingAnalyticLower

MNP_TOL = 1e-10


# --------------------------------------------------------------------------
# smooth bounds
# --------------------------------------------------------------------------

def unsuccessful_bound(alpha: float, L: float, c: float, L_f: float, eps: float, kappa: float) -> float:
    """Gradient bound at an unsuccessful directional iteration with stepsize alpha."""
    return ((L + c) * alpha / 2 + 2 * L_f * eps / alpha) / kappa


def unsuccessful_bound_mesh(Delta: float, L: float, L_f: float, eps: float, kappa: float,
                            b1: float, b2: float) -> float:
    """Same for the mesh scheme, with poll steps of length in [b1 Delta, b2 Delta]."""
    return (b2 * Delta * L / 2 + 2 * L_f * eps / (b1 * Delta)) / kappa


def smooth_bound(config: SolverConfig, meta: ProblemMetadata, kappa: float,
                 b1: float = 1.0, b2: float = 1.0, c=None) -> float:
    """Bound on the gradient norm at the last iterate of a floor-terminated run.

    ``c`` defaults to ``config.c`` for the directional scheme and 0 for the
    mesh scheme (simple decrease).
    """
    L, L_f = meta.require("L", "L_f")
    if c is None:
        c = 0.0 if config.direction_mode == "mesh" else config.c
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    a = float(config.alpha_min)
    if not a > 0:
        raise ValueError("alpha_min must be positive")
    return ((L + c) * b2 * a / 2 + 2 * L_f * config.eps_oracle / (b1 * a)) / kappa


def success_count_bound(F0: float, f_low: float, L_f: float, eps: float, c: float,
                        alpha_min: float) -> float:
    """Maximum number of sufficient-decrease steps with stepsize >= alpha_min."""
    return 2 * (F0 - f_low + 2 * L_f * eps) / (c * alpha_min ** 2)


def iteration_count_bound(F0: float, f_low: float, L_f: float, eps: float, c: float,
                          alpha_min: float, alpha_0: float, gamma: float, theta: float) -> float:
    gap = F0 - f_low + 2 * L_f * eps
    return (1 + 2 / (alpha_min ** 2 * c) * gap * (1 - math.log(gamma) / math.log(theta))
            + (math.log(alpha_min) - math.log(alpha_0)) / math.log(theta))


def goldstein_targets(L_f: float, eps: float, alpha_min: float, c: float = 0.0) -> tuple:
    """(delta, epsilon) for which the limit point is Goldstein stationary.

    Pass c = 0 for the mesh scheme.
    """
    return alpha_min, 4 * L_f * eps / alpha_min + c * alpha_min


def corollary_parameters(L_f: float, eps: float, c: float = None) -> tuple:
    """Balanced choice of alpha_min; returns (alpha_min, delta, epsilon).

    With c (directional): alpha_min = 2 sqrt(L_f eps / c), giving
    epsilon = 4 sqrt(L_f eps c). Without c (mesh): alpha_min = 2 sqrt(L_f eps),
    giving delta = epsilon = 2 sqrt(L_f eps).
    """
    if c is None:
        a = 2 * math.sqrt(L_f * eps)
        return a, a, a
    a = 2 * math.sqrt(L_f * eps / c)
    return a, a, 4 * math.sqrt(L_f * eps * c)


def _run_eps(trace) -> float:
    eps = trace.oracle.get("eps") if trace.oracle else None
    return float(trace.config.eps_oracle if eps is None else eps)


def bound_violations(trace, problem: BilevelProblem, rel_tol: float = 1e-12) -> tuple:
    """Check every unsuccessful iteration against its gradient bound.

    Nonsmooth problems are skipped. Directional runs are checked only in coordinate mode (the other modes do
    not poll a positive spanning set); mesh runs use the realized kappa, b1
    and b2 of each iteration. Returns ``(n_checked, violations)`` where each
    violation is ``(k, grad_norm, bound)``.
    """
    if not problem.meta.smooth_true_objective:
        return 0, []
    if problem.analytic_F_grad is None:
        raise MissingAnalyticLower(f"problem {problem.name} has no analytic gradient")
    L, L_f = problem.meta.require("L", "L_f")
    eps = _run_eps(trace)
    mode = trace.config.direction_mode
    if mode not in ("coordinate", "mesh"):
        return 0, []
    if mode == "mesh" and not trace.config.smooth_mode:
        return 0, []
    checked, bad = 0, []
    for r in trace.rows[1:]:
        if r.success:
            continue
        if mode == "coordinate":
            kappa = r.kappa if r.kappa else 1.0 / math.sqrt(len(r.x))
            bound = unsuccessful_bound(r.alpha, L, trace.config.c, L_f, eps, kappa)
        else:
            if not r.kappa or r.kappa <= 0:
                continue
            bound = unsuccessful_bound_mesh(r.Delta, L, L_f, eps, r.kappa, r.b1, r.b2)
        g = float(np.linalg.norm(problem.analytic_F_grad(r.x)))
        checked += 1
        if g > bound * (1 + rel_tol):
            bad.append((r.k, g, bound))
    return checked, bad


# --------------------------------------------------------------------------
# min-norm point of a convex hull
# --------------------------------------------------------------------------

def _affine_min_norm(P: np.ndarray) -> np.ndarray:
    # argmin |mu P| subject to sum(mu) = 1
    m = len(P)
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = P @ P.T
    K[:m, m] = 1
    K[m, :m] = 1
    rhs = np.zeros(m + 1)
    rhs[m] = 1
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:m]


def min_norm_point(gradients, tol: float = MNP_TOL, max_iter: int = 1000):
    """Minimum-norm element of conv(gradients) by Wolfe's algorithm.

    Returns ``(g, weights)`` with weights on the simplex.
    """
    P = np.atleast_2d(np.asarray(gradients, dtype=float))
    if P.size == 0:
        raise EmptyInput("no gradients given")
    if not np.all(np.isfinite(P)):
        raise ValueError("gradients must be finite")
    m = len(P)
    scale = max(1.0, float((P ** 2).sum(axis=1).max()))
    j = int(np.argmin((P ** 2).sum(axis=1)))
    S = [j]
    lam = np.array([1.0])
    x = P[j].copy()
    for _ in range(max_iter):
        xx = float(x @ x)
        if xx <= tol * tol:
            break
        j = int(np.argmin(P @ x))
        if j in S or float(P[j] @ x) >= xx - tol * scale:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            mu = _affine_min_norm(P[S])
            if np.all(mu > tol):
                lam = mu
                break
            neg = mu <= tol
            denom = lam[neg] - mu[neg]
            steps = np.where(denom > 0, lam[neg] / np.where(denom > 0, denom, 1.0), 0.0)
            t = float(np.min(steps)) if steps.size else 1.0
            lam = lam + t * (mu - lam)
            keep = lam > tol
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ P[S]
    weights = np.zeros(m)
    weights[S] = np.clip(lam, 0, None)
    weights /= weights.sum()
    return weights @ P, weights


# --------------------------------------------------------------------------
# Goldstein certificate
# --------------------------------------------------------------------------

@dataclass
class GoldsteinCertificate:
    x: np.ndarray
    delta: float
    epsilon_target: float
    witness_g: np.ndarray
    witness_norm: float
    samples_used: int
    passed: bool
    weights: np.ndarray = field(default=None, repr=False)
    grad_source: str = ""

    @property
    def verdict(self) -> str:
        return "passed" if self.passed else "inconclusive"

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "delta": self.delta,
            "epsilon_target": self.epsilon_target,
            "witness_g": [float(v) for v in self.witness_g],
            "witness_norm": self.witness_norm,
            "passed": self.passed,
            "verdict": self.verdict,
            "samples_used": self.samples_used,
            "weights": [float(v) for v in self.weights],
            "grad_source": self.grad_source,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def fd_step(x, delta: float = None) -> float:
    h = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    # keep the stencil well inside small balls
    return h if delta is None else min(h, delta / 100.0)


def central_difference_gradient(F, x, h: float = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if h is None else h
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (F(x + e) - F(x - e)) / (2 * h)
    return g


def sample_ball(rng, center, radius: float, n_samples: int) -> np.ndarray:
    """Uniform samples in the closed Euclidean ball."""
    n = len(center)
    v = rng.standard_normal((n_samples, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n_samples) ** (1.0 / n)
    return np.asarray(center, float) + v * r[:, None]


def goldstein_certify(problem: BilevelProblem, x, delta: float, epsilon_target: float,
                      n_samples: int, rng, grad_source: str = "finite_difference") -> GoldsteinCertificate:
    """Try to exhibit a small element of the sampled delta-Goldstein set at x.

    A pass certifies the point up to sampling and differencing error; a fail
    is inconclusive, since the sampled hull under-approximates the true set.
    """
    x = np.asarray(x, dtype=float)
    if n_samples < 1:
        raise ValueError("need at least one sample")
    h = fd_step(x, delta) if delta > 0 else 0.0
    if grad_source == "finite_difference":
        if problem.analytic_lower is None:
            raise MissingAnalyticLower(f"problem {problem.name} exposes no true objective")
        if not delta > h:
            raise ValueError(f"delta={delta} must exceed the difference step {h}")
        radius = delta - h

        def grad(p):
            return central_difference_gradient(problem.true_F, p, h)
    elif grad_source == "analytic_subgrad":
        if problem.analytic_F_grad is None:
            raise MissingAnalyticLower(f"problem {problem.name} has no analytic gradient")
        if not delta > 0:
            raise ValueError("delta must be positive")
        radius = delta
        grad = problem.analytic_F_grad
    else:
        raise ValueError(f"unknown gradient source {grad_source!r}")
    pts = sample_ball(rng, x, radius, n_samples)
    G = np.array([np.asarray(grad(p), dtype=float) for p in pts])
    g, w = min_norm_point(G)
    nrm = float(np.linalg.norm(g))
    return GoldsteinCertificate(x, float(delta), float(epsilon_target), g, nrm, n_samples,
                                nrm <= epsilon_target, w, grad_source)

