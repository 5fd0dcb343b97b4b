"""Trajectory-wise prediction bands from per-timestep quantile regression.

Workflow for one behavior matrix ``B`` (one row per trajectory, one column
per timestep ``t = 1..H``) and starting-state features ``S``:

1. rows ``[0, l)`` train one quantile forest per timestep;
2. exceedances of the remaining rows against the forest band are computed;
3. ``fit_sqbox`` uses rows ``[l, l + m)`` to scale each timestep and rows
   ``[l + m, n)`` to pick a single conformal factor ``beta``; ``fit_cte``
   instead bounds the total exceedance using all rows ``[l, n)``.

The correction ``beta * sigma`` is the same for every starting state; only
the quantile-regression part of the band depends on ``s0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from .conformal import STRICT, QuantileStrategy, conformal_rank, delta_feasible
from .errors import BadSplit, DeltaInvalid, DeltaTooSmall, DimensionMismatch, InsufficientData, LengthMismatch
from .multibox import fill_zero_scales
from .qrf import ForestParams, fit_forest, predict_quantiles
from .seeding import derive_seed

__all__ = [
    "Band",
    "CqrPredictor",
    "CteModel",
    "ForestQuantiles",
    "QuantileModel",
    "SplitConfig",
    "SqboxModel",
    "as_behavior",
    "band_covers",
    "bands_cover",
    "calibrate_cte",
    "calibrate_sqbox",
    "concat_behaviors",
    "cqr_scalar",
    "exceedance",
    "fit_cte",
    "fit_sqbox",
    "fit_timestep_forests",
    "predict_band",
    "qr_band",
]


class QuantileModel(Protocol):
    """Anything that maps starting states to per-timestep quantiles."""

    horizon: int

    def predict(self, features, alphas) -> np.ndarray:
        """Return an ``(n, H, len(alphas))`` array."""


@dataclass(frozen=True, eq=False)
class ForestQuantiles:
    forests: tuple

    @property
    def horizon(self) -> int:
        return len(self.forests)

    @property
    def n_features(self) -> int:
        return self.forests[0].n_features

    def predict(self, features, alphas) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"features have {X.shape[1]} columns, model expects {self.n_features}")
        a = np.atleast_1d(np.asarray(alphas, dtype=float))
        out = np.empty((X.shape[0], self.horizon, a.size))
        for t, forest in enumerate(self.forests):
            out[:, t, :] = predict_quantiles(forest, X, a)
        return out


def fit_timestep_forests(features, behavior, params: ForestParams) -> ForestQuantiles:
    """One forest per column of ``behavior``; seeds derived from ``params.seed``."""
    B = as_behavior(behavior)
    X = np.asarray(features, dtype=float)
    if X.shape[0] != B.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} feature rows but {B.shape[0]} trajectories")
    forests = tuple(
        fit_forest(X, B[:, t], params.with_seed(derive_seed(params.seed, "timestep", t)))
        for t in range(B.shape[1])
    )
    return ForestQuantiles(forests)


@dataclass(frozen=True)
class SplitConfig:
    """Row split and error levels.

    ``m`` is ignored by the total-exceedance methods, which calibrate on
    every row after the first ``l``.
    """

    l: int
    m: int
    delta: float
    delta_prime: float = 0.2
    strategy: QuantileStrategy = STRICT

    def check(self, n: int, family: str = "sqbox") -> None:
        if self.l < 1:
            raise BadSplit(f"l must be >= 1, got {self.l}")
        if family == "sqbox":
            if self.m < 1:
                raise BadSplit(f"m must be >= 1, got {self.m}")
            if self.l + self.m >= n:
                raise BadSplit(f"need l + m < n, got l={self.l}, m={self.m}, n={n}")
            if not self.delta_prime >= self.delta:
                raise BadSplit(f"delta_prime={self.delta_prime} must be >= delta={self.delta}")
        elif self.l >= n:
            raise BadSplit(f"need l < n, got l={self.l}, n={n}")
        if not 0.0 < self.delta_prime < 1.0:
            raise BadSplit(f"delta_prime must lie in (0, 1), got {self.delta_prime}")
        if not 0.0 < self.delta < 1.0:
            raise DeltaInvalid(f"delta must lie in (0, 1), got {self.delta}")
        n_cal, rule = (n - self.l - self.m, "n-l-m+1") if family == "sqbox" else (n - self.l, "n-l+1")
        if not delta_feasible(n_cal, self.delta):
            raise DeltaTooSmall(
                f"split infeasible: delta={self.delta} < 1/({rule})={1.0 / (n_cal + 1):.6g} "
                f"with n={n}, l={self.l}, m={self.m}"
            )

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "m": self.m,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "strategy": self.strategy.kind,
            "ucb_confidence": self.strategy.confidence,
        }


@dataclass(frozen=True)
class Band:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def as_behavior(behavior) -> np.ndarray:
    B = np.asarray(behavior, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[1] < 1:
        raise DimensionMismatch(f"behavior must be an n x H matrix, got shape {B.shape}")
    if np.isnan(B).any():
        raise ValueError("behavior contains NaN")
    return B


def concat_behaviors(*matrices) -> np.ndarray:
    """Stack several behavior variables side by side.

    Fitting on the result takes the maximum standardized exceedance across
    every variable and timestep, giving simultaneous coverage of all of them.
    """
    mats = [as_behavior(m) for m in matrices]
    if len({m.shape[0] for m in mats}) != 1:
        raise LengthMismatch("behavior matrices have different trajectory counts")
    return np.hstack(mats)


def exceedance(b, qlo, qhi) -> np.ndarray:
    """Amount by which ``b`` falls outside ``[qlo, qhi]``, elementwise, >= 0."""
    b = np.asarray(b, dtype=float)
    qlo = np.asarray(qlo, dtype=float)
    qhi = np.asarray(qhi, dtype=float)
    if b.shape != qlo.shape or b.shape != qhi.shape:
        raise LengthMismatch(f"shapes differ: b{b.shape}, qlo{qlo.shape}, qhi{qhi.shape}")
    return np.maximum(0.0, np.maximum(qlo - b, b - qhi))


def _uncross(qlo: np.ndarray, qhi: np.ndarray):
    return np.minimum(qlo, qhi), np.maximum(qlo, qhi)


def _rank_value(scores: np.ndarray, delta: float, strategy: QuantileStrategy):
    rank = conformal_rank(scores.size, delta, strategy)
    return float(np.partition(scores, rank.index - 1)[rank.index - 1]), rank.guaranteed


def calibrate_sqbox(qlo, qhi, behavior, m: int, delta: float, strategy: QuantileStrategy = STRICT):
    """Scale and conformal factor from post-training rows.

    The first ``m`` rows give the per-timestep RMS exceedance, the rest are
    scored.  Returns ``(sigma, beta, guaranteed, scores)``.
    """
    B = as_behavior(behavior)
    x = exceedance(B, *_uncross(np.asarray(qlo, float), np.asarray(qhi, float)))
    if not 1 <= m < B.shape[0]:
        raise BadSplit(f"need 1 <= m < {B.shape[0]}, got m={m}")
    sigma = fill_zero_scales(np.sqrt(np.mean(x[:m] ** 2, axis=0)))
    scores = np.max(x[m:] / sigma, axis=1)
    beta, guaranteed = _rank_value(scores, delta, strategy)
    return sigma, beta, guaranteed, scores


def calibrate_cte(qlo, qhi, behavior, delta: float, strategy: QuantileStrategy = STRICT):
    """Conformal bound on total exceedance.  Returns ``(c_hat, guaranteed, totals)``."""
    B = as_behavior(behavior)
    x = exceedance(B, *_uncross(np.asarray(qlo, float), np.asarray(qhi, float)))
    totals = x.sum(axis=1)
    c_hat, guaranteed = _rank_value(totals, delta, strategy)
    return c_hat, guaranteed, totals


def _check_inputs(behavior, features):
    B = as_behavior(behavior)
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != B.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} starting states but {B.shape[0]} trajectories")
    if np.isnan(X).any():
        raise ValueError("features contain NaN")
    return B, X


def _quantile_model(quantile_model, X, B, l, params):
    if quantile_model is not None:
        if quantile_model.horizon != B.shape[1]:
            raise DimensionMismatch(f"quantile model horizon {quantile_model.horizon} != {B.shape[1]}")
        return quantile_model
    if l < params.min_leaf:
        raise InsufficientData(f"l={l} training rows is below min_leaf={params.min_leaf}")
    return fit_timestep_forests(X[:l], B[:l], params)


@dataclass(frozen=True, eq=False)
class SqboxModel:
    quantiles: QuantileModel
    alpha_lo: float
    alpha_hi: float
    sigma: np.ndarray
    beta: float
    guaranteed: bool
    config: SplitConfig
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.sigma.shape[0]

    @property
    def correction(self) -> np.ndarray:
        return self.beta * self.sigma

    def raw_band(self, features) -> Band:
        q = self.quantiles.predict(features, [self.alpha_lo, self.alpha_hi])
        return Band(*_uncross(q[..., 0], q[..., 1]))

    def predict(self, features) -> Band:
        raw = self.raw_band(features)
        pad = self.correction
        return Band(raw.lo - pad, raw.hi + pad)


@dataclass(frozen=True, eq=False)
class CteModel:
    quantiles: QuantileModel
    alpha_lo: float
    alpha_hi: float
    c_hat: float
    guaranteed: bool
    config: SplitConfig
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.quantiles.horizon

    def predict(self, features) -> Band:
        q = self.quantiles.predict(features, [self.alpha_lo, self.alpha_hi])
        return Band(*_uncross(q[..., 0], q[..., 1]))

    def total_exceedance(self, features, behavior) -> np.ndarray:
        band = self.predict(features)
        return exceedance(as_behavior(behavior), band.lo, band.hi).sum(axis=1)


def fit_sqbox(
    behavior,
    features,
    config: SplitConfig,
    forest_params: ForestParams = ForestParams(),
    quantile_model: Optional[QuantileModel] = None,
) -> SqboxModel:
    """Fit a band covering a fresh trajectory with probability ``1 - delta``.

    Rows are used in the given order: ``[0, l)`` quantile training,
    ``[l, l+m)`` scale estimation, ``[l+m, n)`` calibration.  A prefitted
    ``quantile_model`` replaces the per-timestep forests.
    """
    B, X = _check_inputs(behavior, features)
    n = B.shape[0]
    config.check(n, "sqbox")
    l, m = config.l, config.m
    if n - l - m < 1:
        raise InsufficientData("no calibration rows left after the l and m splits")
    qm = _quantile_model(quantile_model, X, B, l, forest_params)
    alpha_lo, alpha_hi = config.delta_prime / 2, 1 - config.delta_prime / 2
    q = qm.predict(X[l:], [alpha_lo, alpha_hi])
    sigma, beta, guaranteed, _ = calibrate_sqbox(q[..., 0], q[..., 1], B[l:], m, config.delta, config.strategy)
    return SqboxModel(qm, alpha_lo, alpha_hi, sigma, beta, guaranteed, config)


def fit_cte(
    behavior,
    features,
    config: SplitConfig,
    forest_params: ForestParams = ForestParams(),
    quantile_model: Optional[QuantileModel] = None,
) -> CteModel:
    """Quantile band at ``delta/2, 1 - delta/2`` plus a total-exceedance bound."""
    B, X = _check_inputs(behavior, features)
    config = replace(config, delta_prime=config.delta)
    config.check(B.shape[0], "cte")
    qm = _quantile_model(quantile_model, X, B, config.l, forest_params)
    alpha_lo, alpha_hi = config.delta / 2, 1 - config.delta / 2
    q = qm.predict(X[config.l:], [alpha_lo, alpha_hi])
    c_hat, guaranteed, _ = calibrate_cte(q[..., 0], q[..., 1], B[config.l:], config.delta, config.strategy)
    return CteModel(qm, alpha_lo, alpha_hi, c_hat, guaranteed, config)


def predict_band(model: SqboxModel, s0) -> Band:
    """Band for a single starting state."""
    s0 = np.asarray(s0, dtype=float).ravel()
    band = model.predict(s0[None, :])
    return Band(band.lo[0], band.hi[0])


def qr_band(quantiles: QuantileModel, features, delta: float) -> Band:
    """Uncorrected quantile-regression band at ``delta/2, 1 - delta/2``."""
    q = quantiles.predict(features, [delta / 2, 1 - delta / 2])
    return Band(*_uncross(q[..., 0], q[..., 1]))


def band_covers(band: Band, b) -> bool:
    b = np.asarray(b, dtype=float).ravel()
    if b.shape != band.lo.shape:
        raise LengthMismatch(f"behavior length {b.shape[0]} != band length {band.lo.shape[0]}")
    return bool(np.all((band.lo <= b) & (b <= band.hi)))


def bands_cover(lo, hi, behavior) -> np.ndarray:
    """Row-wise closed containment for ``(n, H)`` bands."""
    B = as_behavior(behavior)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != B.shape or hi.shape != B.shape:
        raise LengthMismatch(f"band shape {lo.shape} != behavior shape {B.shape}")
    return np.all((lo <= B) & (B <= hi), axis=1)


@dataclass(frozen=True, eq=False)
class CqrPredictor:
    """Scalar conformalized quantile regression interval."""

    quantiles: QuantileModel
    alpha_lo: float
    alpha_hi: float
    c_hat: float
    guaranteed: bool

    def predict(self, features) -> Band:
        q = self.quantiles.predict(features, [self.alpha_lo, self.alpha_hi])[:, 0, :]
        return Band(q[:, 0] - self.c_hat, q[:, 1] + self.c_hat)

    __call__ = predict


def cqr_scalar(
    features,
    responses,
    l: int,
    delta: float,
    forest_params: ForestParams = ForestParams(),
    delta_prime: Optional[float] = None,
    clamp: bool = False,
    strategy: QuantileStrategy = STRICT,
    quantile_model: Optional[QuantileModel] = None,
) -> CqrPredictor:
    """Split-conformal quantile regression for a scalar response.

    Scores are ``max(qlo - y, y - qhi)`` and may be negative, in which case
    the returned interval is narrower than the quantile band.  ``clamp``
    floors the scores at zero, which makes this the ``H = 1`` case of
    :func:`fit_sqbox` with ``m`` rows removed.
    """
    y = np.asarray(responses, dtype=float).ravel()
    B, X = _check_inputs(y[:, None], features)
    n = B.shape[0]
    if not 1 <= l < n:
        raise InsufficientData(f"need 1 <= l < n, got l={l}, n={n}")
    dp = delta if delta_prime is None else delta_prime
    qm = _quantile_model(quantile_model, X, B, l, forest_params)
    alpha_lo, alpha_hi = dp / 2, 1 - dp / 2
    q = qm.predict(X[l:], [alpha_lo, alpha_hi])[:, 0, :]
    scores = np.maximum(q[:, 0] - y[l:], y[l:] - q[:, 1])
    if clamp:
        scores = np.maximum(scores, 0.0)
    c_hat, guaranteed = _rank_value(scores, delta, strategy)
    return CqrPredictor(qm, alpha_lo, alpha_hi, c_hat, guaranteed)
