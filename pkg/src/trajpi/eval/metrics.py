"""Coverage statistics, exact binomial bounds and failure tables."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..conformal import binomial_cdf
from ..errors import LengthMismatch
from ..trajband import as_behavior

__all__ = [
    "FailureCell",
    "FailureTable",
    "binomial_upper_pvalue",
    "coverage",
    "coverage_ci_lower",
    "empirical_quantile",
    "failure_table",
]


def coverage_ci_lower(hits: int, n: int, confidence: float = 0.99) -> float:
    """One-sided Clopper-Pearson lower bound on a success probability.

    The bound is the ``p`` at which ``P(Bin(n, p) >= hits) = 1 - confidence``,
    found by bisection on the exact binomial CDF.
    """
    if not 0 <= hits <= n or n < 1:
        raise ValueError(f"need 0 <= hits <= n and n >= 1, got hits={hits}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    if hits == 0:
        return 0.0
    alpha = 1.0 - confidence
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        if 1.0 - binomial_cdf(hits - 1, n, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return lo


def binomial_upper_pvalue(k: int, n: int, p: float) -> float:
    """``P(Bin(n, p) >= k)``."""
    if k <= 0:
        return 1.0
    return max(0.0, 1.0 - binomial_cdf(k - 1, n, p))


def empirical_quantile(values, q: float) -> float:
    """Smallest value whose empirical CDF reaches ``q``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("no values")
    k = max(1, math.ceil(q * v.size - 1e-12))
    return float(v[min(k, v.size) - 1])


def coverage(lo, hi, behavior, confidence: float = 0.99) -> dict:
    """Fraction of rows of ``behavior`` inside the closed bands ``[lo, hi]``."""
    B = as_behavior(behavior)
    try:
        lo = np.broadcast_to(np.asarray(lo, dtype=float), B.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), B.shape)
    except ValueError:
        raise LengthMismatch(f"band shapes do not match behavior shape {B.shape}") from None
    inside = (lo <= B) & (B <= hi)
    covered = inside.all(axis=1)
    hits = int(covered.sum())
    n = B.shape[0]
    width = hi - lo
    return {
        "n": n,
        "hits": hits,
        "coverage": hits / n,
        "coverage_lower": coverage_ci_lower(hits, n, confidence),
        "confidence": confidence,
        "violation_by_t": ((~inside).sum(axis=0) / n).tolist(),
        "width_by_t": width.mean(axis=0).tolist(),
        "mean_width": float(width.mean()),
        "covered": covered,
    }


@dataclass
class FailureCell:
    key: tuple
    trials: int
    violations: int
    rate: float
    p_value: float
    flagged: bool


@dataclass
class FailureTable:
    delta: float
    alpha: float
    cells: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(c.trials for c in self.cells)

    def flagged(self) -> list:
        return [c for c in self.cells if c.flagged]

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "cells": [
                {"key": list(c.key), "trials": c.trials, "violations": c.violations,
                 "rate": c.rate, "p_value": c.p_value, "flagged": c.flagged}
                for c in self.cells
            ],
        }


def failure_table(keys, violations, delta: float, alpha: float = 0.05) -> FailureTable:
    """Per-start-state violation rates with an exact one-sided binomial test.

    A cell is flagged when ``P(Bin(trials, delta) >= violations) < alpha``.
    """
    keys = [tuple(k) if isinstance(k, (list, tuple, np.ndarray)) else (k,) for k in keys]
    viol = np.asarray(violations, dtype=bool).ravel()
    if len(keys) != viol.size:
        raise LengthMismatch(f"{len(keys)} keys but {viol.size} violation flags")
    if viol.size == 0:
        raise ValueError("no trials")
    counts = defaultdict(lambda: [0, 0])
    for k, v in zip(keys, viol):
        counts[k][0] += 1
        counts[k][1] += int(v)
    table = FailureTable(delta, alpha)
    for k in sorted(counts):
        trials, v = counts[k]
        p = binomial_upper_pvalue(v, trials, delta)
        table.cells.append(FailureCell(k, trials, v, v / trials, p, bool(v > 0 and p < alpha)))
    return table
