"""Exact conformal quantile selection and order-statistic confidence bounds.

Every interval in the package reduces to picking one order statistic of a
list of exchangeable nonconformity scores.  Two rules are provided:

* ``strict``: the ``ceil((1 - delta) (n + 1))``-th smallest score, which
  gives marginal coverage of at least ``1 - delta``.
* ``ucb``: the smallest order statistic that is, with probability at least
  ``confidence``, above the ``(1 - delta) (n + 1) / n`` quantile of the
  score distribution.  Coverage then holds for a ``confidence`` fraction of
  calibration draws instead of only on average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Literal, NamedTuple, Optional

import numpy as np

from .errors import DeltaInvalid, DeltaTooSmall, EmptyScores

__all__ = [
    "QuantileStrategy",
    "STRICT",
    "UCB",
    "Rank",
    "as_scores",
    "binomial_cdf",
    "binomial_cdf_table",
    "conformal_index",
    "conformal_quantile",
    "conformal_rank",
    "quantile_ucb",
    "ucb_index",
    "validate_delta",
]


@dataclass(frozen=True)
class QuantileStrategy:
    """How the conformal order statistic is chosen.

    ``confidence`` is only read by the ``ucb`` kind.  ``None`` means
    "use ``1 - delta``", the level the CI variants use by default.
    """

    kind: Literal["strict", "ucb"] = "strict"
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("strict", "ucb"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.confidence is not None and not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {self.confidence}")

    @classmethod
    def ucb(cls, confidence: Optional[float] = None) -> "QuantileStrategy":
        return cls("ucb", confidence)

    def confidence_for(self, delta: float) -> float:
        return 1.0 - delta if self.confidence is None else self.confidence

    @property
    def label(self) -> str:
        return self.kind


STRICT = QuantileStrategy("strict")
UCB = QuantileStrategy("ucb")


class Rank(NamedTuple):
    """1-based order-statistic index plus whether the guarantee holds."""

    index: int
    guaranteed: bool


def _exact(x: float) -> Fraction:
    # Decimal literal the caller most likely meant: 0.1 -> 1/10, not the
    # binary approximation that makes (1 - 0.1) * 20 land above 18.
    return Fraction(repr(float(x)))


def delta_feasible(n_cal: int, delta: float) -> bool:
    """``delta >= 1/(n_cal + 1)``, read either as a decimal or as the float ``1/(n_cal+1)``."""
    return n_cal >= 1 and (_exact(delta) >= Fraction(1, n_cal + 1) or delta >= 1.0 / (n_cal + 1))


def validate_delta(n_cal: int, delta: float) -> None:
    if n_cal < 1:
        raise EmptyScores("no calibration scores")
    if not (0.0 < delta < 1.0) or math.isnan(delta):
        raise DeltaInvalid(f"delta must lie in (0, 1), got {delta}")
    if not delta_feasible(n_cal, delta):
        raise DeltaTooSmall(
            f"delta={delta} is below 1/(n+1)={1.0 / (n_cal + 1):.6g} for n={n_cal} "
            f"calibration scores; need at least {math.ceil(1.0 / delta) - 1} scores"
        )


def conformal_index(n_cal: int, delta: float) -> int:
    """Return ``ceil((1 - delta) (n_cal + 1))``, the strict conformal index.

    Exact rational arithmetic is used so that products which are integers
    on paper are not pushed to the next index by binary rounding.
    """
    validate_delta(n_cal, delta)
    k = math.ceil((1 - _exact(delta)) * (n_cal + 1))
    return max(1, min(k, n_cal))


_EXACT_MAX_N = 64


@lru_cache(maxsize=512)
def _cdf_table(n: int, p: float) -> np.ndarray:
    if p <= 0.0:
        return np.ones(n + 1)
    if p >= 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    if n <= _EXACT_MAX_N:
        # small n: exact integer sums over the common denominator d**n; int
        # true division rounds correctly, so each entry is the rounded exact CDF
        a, d = p.as_integer_ratio()
        b = d - a
        denom = d**n
        acc, vals = 0, []
        for j in range(n + 1):
            acc += math.comb(n, j) * a**j * b ** (n - j)
            vals.append(acc / denom)
        cdf = np.array(vals)
        cdf.setflags(write=False)
        return cdf
    # Unnormalized pmf by ratio recurrence outward from the mode, then one
    # normalization; avoids underflow of (1-p)^n and log-gamma round-off.
    mode = min(n, int(math.floor((n + 1) * p)))
    odds = p / (1.0 - p)
    w = np.zeros(n + 1)
    w[mode] = 1.0
    if mode < n:
        j = np.arange(mode, n, dtype=float)
        w[mode + 1:] = np.cumprod((n - j) / (j + 1.0) * odds)
    if mode > 0:
        j = np.arange(mode, 0, -1, dtype=float)
        w[mode - 1::-1] = np.cumprod(j / (n - j + 1.0) / odds)
    w /= math.fsum(w)
    lower = np.cumsum(w)
    upper = np.cumsum(w[::-1])[::-1]  # upper[k] = P(X >= k)
    cdf = lower.copy()
    # above the mode the complement of the upper tail is the accurate form
    cdf[mode:n] = 1.0 - upper[mode + 1:]
    cdf[n] = 1.0
    cdf = np.clip(np.maximum.accumulate(cdf), 0.0, 1.0)
    cdf.setflags(write=False)
    return cdf


def binomial_cdf_table(n: int, p: float) -> np.ndarray:
    """Array of ``P(Bin(n, p) <= k)`` for ``k = 0..n`` (read-only)."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return _cdf_table(int(n), float(p))


def binomial_cdf(k: int, n: int, p: float) -> float:
    """Exact ``P(Bin(n, p) <= k)``."""
    if k < 0:
        return 0.0
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    return float(binomial_cdf_table(n, p)[k])


def ucb_index(n: int, q: float, confidence: float) -> Rank:
    """Smallest ``r`` with ``P(Bin(n, q) <= r - 1) >= confidence``.

    ``X_(r)`` then upper-bounds the ``q`` quantile with probability at least
    ``confidence`` for continuous iid samples.  When even ``r = n`` falls
    short, ``Rank(n, False)`` is returned.
    """
    if n < 1:
        raise EmptyScores("no scores")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    cdf = binomial_cdf_table(n, q)[:n]  # entry r-1 for r = 1..n
    r = int(np.searchsorted(cdf, confidence, side="left")) + 1
    if r > n:
        return Rank(n, False)
    return Rank(r, True)


def conformal_rank(n_cal: int, delta: float, strategy: QuantileStrategy = STRICT) -> Rank:
    """Order-statistic index chosen by ``strategy`` for ``n_cal`` scores."""
    k = conformal_index(n_cal, delta)
    if strategy.kind == "strict":
        return Rank(k, True)
    q = (1.0 - delta) * (n_cal + 1) / n_cal
    q = min(q, math.nextafter(1.0, 0.0))
    return ucb_index(n_cal, q, strategy.confidence_for(delta))


def as_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyScores("no scores")
    if np.isnan(arr).any():
        raise ValueError("scores contain NaN")
    return arr


def _order_stat(arr: np.ndarray, index: int) -> float:
    return float(np.partition(arr, index - 1)[index - 1])


def quantile_ucb(scores, q: float, confidence: float) -> float:
    """Upper confidence bound on the ``q`` quantile of the score law.

    Returns the sample maximum when no order statistic reaches the
    requested confidence; use :func:`ucb_index` to see that flag.
    """
    arr = as_scores(scores)
    rank = ucb_index(arr.size, q, confidence)
    return _order_stat(arr, rank.index)


def conformal_quantile(scores, delta: float, strategy: QuantileStrategy = STRICT) -> float:
    arr = as_scores(scores)
    rank = conformal_rank(arr.size, delta, strategy)
    return _order_stat(arr, rank.index)
