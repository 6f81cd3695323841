"""Problem model, reduced-objective evaluation and shared configuration."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .errors import (
    BudgetExhausted,
    EmptyDirectionSet,
    InvalidConfig,
    MetadataViolation,
    MissingAnalyticLower,
    MissingMetadata,
    NonFiniteValue,
)

Vector = np.ndarray

DIRECTION_MODES = ("coordinate", "random", "dense", "mesh")


# --------------------------------------------------------------------------
# randomness
# --------------------------------------------------------------------------

def stable_hash(*parts) -> int:
    """64-bit integer digest of ``parts``; stable across processes and runs."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Child generator of the run seed, split by ``keys`` (strings or ints)."""
    entropy = [int(seed) & (2**64 - 1)] + [stable_hash(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# --------------------------------------------------------------------------
# problem model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemMetadata:
    """Regularity constants of a bilevel problem; ``None`` means unknown.

    ``region`` documents where the constants were derived, since several
    test problems only have local Lipschitz constants.
    """

    L_f: Optional[float] = None
    L: Optional[float] = None
    L_F: Optional[float] = None
    c_g: Optional[float] = None
    L_g: Optional[float] = None
    f_low: Optional[float] = None
    smooth_true_objective: bool = True
    region: str = ""

    def __post_init__(self):
        for name in ("L_f", "L", "L_F", "c_g", "L_g"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        for name in ("c_g", "L_g"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingMetadata("unknown problem constants: " + ", ".join(missing))
        vals = tuple(float(getattr(self, n)) for n in names)
        return vals[0] if len(vals) == 1 else vals


@dataclass(frozen=True, eq=False)
class BilevelProblem:
    """min_x f(x, y(x)) with y(x) the unique minimizer of g(x, .) over a box."""

    name: str
    n_x: int
    n_y: int
    upper: Callable[[Vector, Vector], float]
    lower: Callable[[Vector, Vector], float]
    lower_grad_y: Callable[[Vector, Vector], Vector]
    lower_box: tuple = None
    analytic_lower: Optional[Callable[[Vector], Vector]] = None
    analytic_F_grad: Optional[Callable[[Vector], Vector]] = None
    meta: ProblemMetadata = field(default_factory=ProblemMetadata)
    start_box: Optional[tuple] = None
    F_star: Optional[float] = None
    x_star: Optional[Vector] = None
    description: str = ""

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("dimensions must be positive")
        if self.lower_box is None:
            box = (np.full(self.n_y, -np.inf), np.full(self.n_y, np.inf))
        else:
            box = (np.asarray(self.lower_box[0], float).reshape(self.n_y),
                   np.asarray(self.lower_box[1], float).reshape(self.n_y))
        if np.any(box[0] > box[1]):
            raise ValueError("feasible box has lower bound above upper bound")
        object.__setattr__(self, "lower_box", box)

    @property
    def box_is_unbounded(self) -> bool:
        return bool(np.all(np.isinf(self.lower_box[0])) and np.all(np.isinf(self.lower_box[1])))

    def project(self, z: Vector) -> Vector:
        return np.clip(z, self.lower_box[0], self.lower_box[1])

    def default_y0(self) -> Vector:
        lo, hi = self.lower_box
        finite = np.isfinite(lo) & np.isfinite(hi)
        mid = np.zeros(self.n_y)
        mid[finite] = 0.5 * (lo[finite] + hi[finite])
        return self.project(mid)

    def true_F(self, x: Vector) -> float:
        """Exact reduced objective F(x) = f(x, y(x))."""
        if self.analytic_lower is None:
            raise MissingAnalyticLower(f"problem {self.name} has no analytic lower solution")
        x = np.asarray(x, float)
        return float(self.upper(x, self.analytic_lower(x)))


# --------------------------------------------------------------------------
# evaluation ledger and reduced objective
# --------------------------------------------------------------------------

@dataclass
class EvalLedger:
    """Budget accounting and exact-bit cache of reduced-objective values."""

    budget: int
    upper_evals: int = 0
    lower_oracle_calls: int = 0
    lower_inner_iters: int = 0
    cache: dict = field(default_factory=dict)
    f_low: Optional[float] = None
    _points: list = field(default_factory=list, repr=False)
    _ys: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be a positive integer")

    @property
    def remaining(self) -> int:
        return self.budget - self.upper_evals

    def store(self, x: Vector, y: Vector, F: float) -> None:
        self.cache[x.tobytes()] = (y, F)
        if np.all(np.isfinite(y)):
            self._points.append(x.copy())
            self._ys.append(y)

    def nearest_y(self, x: Vector) -> Optional[Vector]:
        """Oracle output at the cached point closest to ``x`` (warm start)."""
        if not self._points:
            return None
        pts = np.asarray(self._points)
        i = int(np.argmin(np.sum((pts - x) ** 2, axis=1)))
        return self._ys[i]


def evaluate_reduced(problem: BilevelProblem, x, oracle, ledger: EvalLedger):
    """Return ``(y_tilde, F_tilde)`` at ``x``, using the cache when possible.

    A fresh evaluation costs one oracle call and one upper-level evaluation.
    Non-finite results are cached and counted before raising, so a bad point
    is paid for exactly once.
    """
    x = np.asarray(x, dtype=float)
    hit = ledger.cache.get(x.tobytes())
    if hit is not None:
        if not math.isfinite(hit[1]):
            raise NonFiniteValue(f"non-finite objective at cached point {x}")
        return hit
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"non-finite point {x}")
    if ledger.upper_evals >= ledger.budget:
        raise BudgetExhausted()
    y0 = ledger.nearest_y(x) if getattr(oracle, "warm_start", False) else None
    report = oracle(problem, x, y0=y0)
    ledger.lower_oracle_calls += 1
    ledger.lower_inner_iters += report.inner_iters
    y = report.y_tilde
    F = float(problem.upper(x, y))
    ledger.upper_evals += 1
    ledger.store(x.copy(), y, F)
    if not math.isfinite(F):
        raise NonFiniteValue(f"upper objective returned {F} at {x}")
    f_low = ledger.f_low if ledger.f_low is not None else problem.meta.f_low
    if f_low is not None and F < f_low:
        raise MetadataViolation(f"observed f={F!r} below declared f_low={f_low!r}")
    return y, F


def decrease_accepted(F_candidate: float, F_incumbent: float, alpha: float,
                      rho_kind: str, c: float = 0.0) -> bool:
    """Strict decrease test F_candidate < F_incumbent - rho(alpha).

    ``rho_kind`` is ``"sufficient"`` (rho = c/2 alpha^2) or ``"simple"`` (rho = 0).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if rho_kind == "sufficient":
        rho = 0.5 * c * alpha * alpha
    elif rho_kind == "simple":
        rho = 0.0
    else:
        raise ValueError(f"unknown forcing function {rho_kind!r}")
    return F_candidate < F_incumbent - rho


# --------------------------------------------------------------------------
# directions and the cosine measure
# --------------------------------------------------------------------------

@dataclass
class DirectionSet:
    """Poll directions as rows of ``dirs``.

    Mesh directions also carry ``integer_dirs`` (exact Python ints).
    """

    dirs: np.ndarray
    mode: str
    kappa_hint: Optional[float] = None
    integer_dirs: Optional[list] = None

    def __len__(self):
        return len(self.dirs)

    def __iter__(self):
        return iter(self.dirs)


def _symmetric_pairs(U: np.ndarray, tol=1e-12):
    """One representative per {u, -u} pair, or None if some -u is missing."""
    used = np.zeros(len(U), dtype=bool)
    reps = []
    for i in range(len(U)):
        if used[i]:
            continue
        used[i] = True
        match = np.flatnonzero(~used & (np.abs(U + U[i]).max(axis=1) <= tol))
        if match.size == 0:
            return None
        used[match[0]] = True
        reps.append(U[i])
    return np.asarray(reps)


def _cm_symmetric_basis(B: np.ndarray) -> float:
    # {±b_i} with B square invertible: cm = 1 / max over sign vectors of |B^-1 s|.
    n = B.shape[0]
    Binv = np.linalg.inv(B)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n - 1)))
    S = np.hstack([np.ones((len(signs), 1)), signs])
    return float(1.0 / np.sqrt(((S @ Binv.T) ** 2).sum(axis=1)).max())


def _cm_planar(U: np.ndarray) -> float:
    ang = np.sort(np.mod(np.arctan2(U[:, 1], U[:, 0]), 2 * np.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return float(np.cos(gaps.max() / 2))


def _cm_numeric(U: np.ndarray, rng, n_samples: int, n_starts: int) -> float:
    from scipy.optimize import minimize

    n = U.shape[1]
    V = rng.standard_normal((n_samples, n))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    phi = (V @ U.T).max(axis=1)
    best = float(phi.min())
    cons = [
        {"type": "ineq", "fun": lambda z: z[-1] - U @ z[:-1], "jac": lambda z: np.hstack([-U, np.ones((len(U), 1))])},
        {"type": "eq", "fun": lambda z: z[:-1] @ z[:-1] - 1.0,
         "jac": lambda z: np.append(2 * z[:-1], 0.0)},
    ]
    for i in np.argsort(phi)[:n_starts]:
        z0 = np.append(V[i], phi[i])
        res = minimize(lambda z: z[-1], z0, jac=lambda z: np.append(np.zeros(n), 1.0),
                       constraints=cons, method="SLSQP", options={"maxiter": 200, "ftol": 1e-14})
        v = res.x[:-1]
        nv = np.linalg.norm(v)
        if nv > 0:
            best = min(best, float((U @ (v / nv)).max()))
    return best


def cosine_measure(D, rng=None, n_samples: int = 20000, n_starts: int = 16) -> float:
    """min over unit v of max over d in D of d.v / |d|.

    Exact for n <= 2, for symmetric sets {±d_i} (rank-deficient or exactly n
    pairs) and hence for the coordinate set. Other sets fall back to sphere
    sampling refined by SLSQP; that value can only overstate the true measure.
    """
    dirs = D.dirs if isinstance(D, DirectionSet) else D
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if dirs.size == 0:
        raise EmptyDirectionSet("direction set is empty")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ValueError("directions must be finite and nonzero")
    U = dirs / norms[:, None]
    n = U.shape[1]
    if n == 1:
        return float(min(U.max(), (-U).max()))
    reps = _symmetric_pairs(U)
    if reps is not None:
        if np.linalg.matrix_rank(reps) < n:
            return 0.0
        if len(reps) == n and n <= 20:
            return _cm_symmetric_basis(reps)
    if n == 2:
        return _cm_planar(U)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _cm_numeric(U, rng, n_samples, n_starts)


# --------------------------------------------------------------------------
# solver configuration
# --------------------------------------------------------------------------

def as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(v)


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm parameters; defaults are the benchmark settings."""

    alpha_0: float = 1.0
    alpha_min: float = 1e-6
    theta: Fraction = Fraction(1, 2)
    gamma: float = 2.0
    c: float = 1e-3
    eps_oracle: float = 0.0
    direction_mode: str = "coordinate"
    seed: int = 0
    budget: int = 500
    mu_0: int = 0
    smooth_mode: bool = True
    max_iter: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "theta", as_fraction(self.theta))

    @classmethod
    def mesh_defaults(cls, **kw) -> "SolverConfig":
        # alpha_0 must equal alpha_min * theta^-mu_0 exactly; 1e-6 is not a power of 1/2.
        base = dict(alpha_0=1.0, alpha_min=2.0 ** -20, mu_0=20, direction_mode="mesh")
        base.update(kw)
        return cls(**base)

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> "SolverConfig":
        if self.direction_mode not in DIRECTION_MODES:
            raise InvalidConfig(f"unknown direction_mode {self.direction_mode!r}")
        if not (self.alpha_0 > 0 and math.isfinite(self.alpha_0)):
            raise InvalidConfig("alpha_0 must be positive and finite")
        if not self.alpha_min >= 0:
            raise InvalidConfig("alpha_min must be nonnegative")
        if self.alpha_0 < self.alpha_min:
            raise InvalidConfig("alpha_0 must be >= alpha_min")
        if not 0 < self.theta < 1:
            raise InvalidConfig("theta must lie in (0, 1)")
        if not self.gamma >= 1:
            raise InvalidConfig("gamma must be >= 1")
        if not self.c > 0:
            raise InvalidConfig("c must be positive")
        if not self.eps_oracle >= 0:
            raise InvalidConfig("eps_oracle must be nonnegative")
        if int(self.budget) != self.budget or self.budget < 1:
            raise InvalidConfig("budget must be a positive integer")
        if int(self.mu_0) != self.mu_0 or self.mu_0 < 0:
            raise InvalidConfig("mu_0 must be a nonnegative integer")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be positive")
        if self.direction_mode == "mesh" and self.alpha_min > 0:
            expected = as_fraction(self.alpha_min) * self.theta ** (-int(self.mu_0))
            if as_fraction(self.alpha_0) != expected:
                raise InvalidConfig(
                    f"mesh mode needs alpha_0 = alpha_min * theta^-mu_0 = {float(expected)!r}, "
                    f"got {self.alpha_0!r}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["theta"] = f"{self.theta.numerator}/{self.theta.denominator}"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig("unknown config keys: " + ", ".join(sorted(unknown)))
        return cls(**d)
