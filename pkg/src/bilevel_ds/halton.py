"""Halton points mapped onto the unit sphere (a deterministic dense sequence)."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def first_primes(m: int) -> tuple:
    primes = []
    cand = 2
    while len(primes) < m:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return tuple(primes)


def radical_inverse(k: int, base: int) -> float:
    """Van der Corput radical inverse of the integer ``k`` in ``base``."""
    inv, f = 0.0, 1.0 / base
    while k > 0:
        k, digit = divmod(k, base)
        inv += digit * f
        f /= base
    return inv


def halton_point(k: int, bases) -> np.ndarray:
    return np.array([radical_inverse(k, b) for b in bases])


def sphere_point(k: int, n: int) -> np.ndarray:
    """k-th point (k >= 1) of the Halton-to-sphere map in R^n.

    Uses bases of the first 2*ceil(n/2) primes, Box-Muller on consecutive
    coordinate pairs, then normalization.
    """
    if k < 1:
        raise ValueError("Halton index must be >= 1")
    m = 2 * ((n + 1) // 2)
    u = halton_point(k, first_primes(m))
    z = np.empty(m)
    for j in range(0, m, 2):
        r = math.sqrt(-2.0 * math.log(u[j]))
        z[j] = r * math.cos(2 * math.pi * u[j + 1])
        z[j + 1] = r * math.sin(2 * math.pi * u[j + 1])
    z = z[:n]
    nz = np.linalg.norm(z)
    if nz == 0:
        # guard against an exactly vanishing sample
        z = np.ones(n)
        nz = math.sqrt(n)
    return z / nz
