"""Synthetic samplers: equicorrelated Gaussians and the standard Cauchy."""
from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidCorrelation
from ..seeding import stream


def gen_gaussian(n: int, d: int, rho: float, seed: int) -> np.ndarray:
    """``n`` iid draws from N(0, S), S with unit diagonal and ``rho`` elsewhere.

    Uses ``x = sqrt(rho) z0 + sqrt(1 - rho) z`` for ``rho >= 0`` and a
    Cholesky factor for admissible negative ``rho``.
    """
    lower = -1.0 / (d - 1) if d > 1 else -1.0
    if not lower < rho < 1.0:
        raise InvalidCorrelation(f"rho={rho} outside ({lower:.6g}, 1) for d={d}")
    rng = stream(seed, "gaussian")
    if rho >= 0:
        z0 = rng.standard_normal((n, 1))
        z = rng.standard_normal((n, d))
        return math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * z
    cov = np.full((d, d), rho)
    np.fill_diagonal(cov, 1.0)
    return rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T


def gen_t1(n: int, seed: int) -> np.ndarray:
    """Standard Cauchy (Student t with one degree of freedom) sample."""
    u = stream(seed, "t1").random(n)
    return np.tan(np.pi * (u - 0.5))


def true_t1_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return math.tan(math.pi * (p - 0.5))
