"""Axis-aligned box prediction regions for iid vectors.

``fit_sbox`` standardizes each coordinate with the mean and standard
deviation of the first ``m`` rows, scores each remaining row by its largest
standardized deviation, and scales all coordinates by one conformal factor.
``fit_bonferroni`` is the per-coordinate baseline at level ``delta / d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import STRICT, QuantileStrategy, conformal_rank
from .errors import AllScalesZero, BadSplit, DimensionMismatch

__all__ = [
    "BoxInterval",
    "as_points",
    "box_contains",
    "box_contains_many",
    "fill_zero_scales",
    "fit_bonferroni",
    "fit_sbox",
    "max_standardized_deviation",
]


@dataclass(frozen=True)
class BoxInterval:
    lo: np.ndarray
    hi: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    beta: float
    guaranteed: bool = True

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.hi - self.lo))


def as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch(f"expected an n x d matrix, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError("points contain NaN")
    if x.shape[0] < 2 or x.shape[1] < 1:
        raise BadSplit(f"need n >= 2 and d >= 1, got shape {x.shape}")
    return x


def fill_zero_scales(scale: np.ndarray) -> np.ndarray:
    """Replace zeros with the smallest positive entry; raise if all zero."""
    scale = np.asarray(scale, dtype=float)
    positive = scale[scale > 0]
    if positive.size == 0:
        raise AllScalesZero("every scale estimate is zero")
    return np.where(scale > 0, scale, positive.min())


def max_standardized_deviation(x: np.ndarray, center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.max(np.abs(x - center) / scale, axis=1)


def _check_split(n: int, m: int) -> None:
    if not 2 <= m < n - 1:
        raise BadSplit(f"need 2 <= m < n - 1, got m={m}, n={n}")


def fit_sbox(points, m: int, delta: float, strategy: QuantileStrategy = STRICT) -> BoxInterval:
    """Fit a box covering a fresh draw with probability ``1 - delta``.

    Rows ``0..m-1`` estimate the center and scale, rows ``m..n-1`` are the
    calibration set.  Rows are used in the order given.
    """
    x = as_points(points)
    n = x.shape[0]
    _check_split(n, m)
    head = x[:m]
    center = head.mean(axis=0)
    scale = fill_zero_scales(head.std(axis=0, ddof=1))
    scores = max_standardized_deviation(x[m:], center, scale)
    rank = conformal_rank(scores.size, delta, strategy)
    beta = float(np.partition(scores, rank.index - 1)[rank.index - 1])
    return BoxInterval(
        lo=center - beta * scale,
        hi=center + beta * scale,
        center=center,
        scale=scale,
        beta=beta,
        guaranteed=rank.guaranteed,
    )


def fit_bonferroni(points, m: int, delta: float) -> BoxInterval:
    """Concatenate ``d`` one-dimensional strict boxes, each at ``delta / d``.

    The per-coordinate factor is folded into ``scale`` and ``beta`` is 1.
    """
    x = as_points(points)
    n, d = x.shape
    _check_split(n, m)
    level = delta / d
    lo, hi, center, scale = (np.empty(d) for _ in range(4))
    for j in range(d):
        box = fit_sbox(x[:, j:j + 1], m, level, STRICT)
        lo[j], hi[j], center[j] = box.lo[0], box.hi[0], box.center[0]
        scale[j] = box.beta * box.scale[0]
    return BoxInterval(lo=lo, hi=hi, center=center, scale=scale, beta=1.0)


def box_contains(box: BoxInterval, point) -> bool:
    p = np.asarray(point, dtype=float).ravel()
    if p.shape[0] != box.dim:
        raise DimensionMismatch(f"point has {p.shape[0]} coordinates, box has {box.dim}")
    return bool(np.all((box.lo <= p) & (p <= box.hi)))


def box_contains_many(box: BoxInterval, points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[1] != box.dim:
        raise DimensionMismatch(f"points have shape {x.shape}, box has {box.dim} coordinates")
    return np.all((box.lo <= x) & (x <= box.hi), axis=1)
