"""Replication studies.

Each runner takes a config dataclass and returns a JSON-ready report dict
``{"study", "config", "records", ...}``.  Every number in a report is a
deterministic function of the config (seed included).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..conformal import STRICT, UCB, QuantileStrategy, conformal_rank
from ..envs.synthetic import gen_gaussian, gen_t1, true_t1_quantile
from ..envs.trajectories import TrajectorySet, make_env, sample_trajectories
from ..multibox import box_contains_many, fit_bonferroni, fit_sbox
from ..qrf import ForestParams
from ..seeding import derive_seed, stream
from ..trajband import calibrate_cte, calibrate_sqbox, exceedance, fit_timestep_forests
from .metrics import coverage, coverage_ci_lower, empirical_quantile, failure_table

__all__ = [
    "GaussianStudyConfig",
    "MdpStudyConfig",
    "QuantileCIStudyConfig",
    "run_gaussian_study",
    "run_mdp_study",
    "run_quantile_ci_study",
]

DELTAS = (0.2, 0.1, 0.05, 0.01)


def _ucb(confidence):
    return QuantileStrategy.ucb(confidence)


@dataclass(frozen=True)
class GaussianStudyConfig:
    d: int = 10
    n: int = 2000
    m: int = 50
    n_test: int = 5000
    replications: int = 100
    rhos: tuple = (0.0, 0.9)
    deltas: tuple = DELTAS
    ucb_confidence: Optional[float] = None
    seed: int = 2021

    def quick(self) -> "GaussianStudyConfig":
        return replace(self, replications=10, n_test=500)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rhos"], d["deltas"] = list(self.rhos), list(self.deltas)
        return d


def run_gaussian_study(config: GaussianStudyConfig = GaussianStudyConfig()) -> dict:
    """SBox, SBoxCI and per-coordinate Bonferroni boxes on equicorrelated data.

    Within a replication all methods and all deltas share the same
    training and test draws.
    """
    methods = ("sbox", "sboxci", "bonferroni")
    cov = {(r, dl, mth): [] for r in config.rhos for dl in config.deltas for mth in methods}
    wid = {k: [] for k in cov}
    for ri, rho in enumerate(config.rhos):
        for rep in range(config.replications):
            train = gen_gaussian(config.n, config.d, rho, derive_seed(config.seed, "train", ri, rep))
            test = gen_gaussian(config.n_test, config.d, rho, derive_seed(config.seed, "test", ri, rep))
            for dl in config.deltas:
                boxes = {
                    "sbox": fit_sbox(train, config.m, dl, STRICT),
                    "sboxci": fit_sbox(train, config.m, dl, _ucb(config.ucb_confidence)),
                    "bonferroni": fit_bonferroni(train, config.m, dl),
                }
                for mth, box in boxes.items():
                    cov[(rho, dl, mth)].append(float(box_contains_many(box, test).mean()))
                    wid[(rho, dl, mth)].append(box.mean_width)
    records = []
    for (rho, dl, mth), c in cov.items():
        c = np.asarray(c)
        hits = int(round(c.sum() * config.n_test))
        total = config.n_test * c.size
        records.append({
            "rho": rho,
            "delta": dl,
            "method": mth,
            "target": 1 - dl,
            "replications": int(c.size),
            "mean_coverage": float(c.mean()),
            "coverage_lower": coverage_ci_lower(hits, total, 0.99),
            "coverage_delta_quantile": empirical_quantile(c, dl),
            "mean_width": float(np.mean(wid[(rho, dl, mth)])),
            "coverages": c.tolist(),
        })
    return {"study": "gaussian", "config": config.to_dict(), "records": records}


@dataclass(frozen=True)
class QuantileCIStudyConfig:
    deltas: tuple = DELTAS
    sizes: tuple = (200, 400, 800, 1600, 3200, 6400)
    trials: int = 1000
    ucb_confidence: Optional[float] = None
    seed: int = 2021

    def quick(self) -> "QuantileCIStudyConfig":
        return replace(self, trials=200)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deltas"], d["sizes"] = list(self.deltas), list(self.sizes)
        return d


def run_quantile_ci_study(config: QuantileCIStudyConfig = QuantileCIStudyConfig()) -> dict:
    """How often the strict and UCB conformal estimates reach the true
    ``1 - delta`` quantile of a standard Cauchy sample."""
    records = []
    for di, dl in enumerate(config.deltas):
        truth = true_t1_quantile(1 - dl)
        for n in config.sizes:
            strict = conformal_rank(n, dl, STRICT)
            ucb = conformal_rank(n, dl, _ucb(config.ucb_confidence))
            est_s = np.empty(config.trials)
            est_u = np.empty(config.trials)
            for trial in range(config.trials):
                x = np.sort(gen_t1(n, derive_seed(config.seed, "trial", di, n, trial)))
                est_s[trial] = x[strict.index - 1]
                est_u[trial] = x[ucb.index - 1]
            records.append({
                "delta": dl,
                "n": n,
                "true_quantile": truth,
                "strict_index": strict.index,
                "ucb_index": ucb.index,
                "ucb_guaranteed": ucb.guaranteed,
                "strict_success": float(np.mean(est_s >= truth)),
                "ucb_success": float(np.mean(est_u >= truth)),
                "strict_median": float(np.median(est_s)),
                "ucb_median": float(np.median(est_u)),
            })
    return {"study": "quantile-ci", "config": config.to_dict(), "records": records}


@dataclass(frozen=True)
class MdpStudyConfig:
    env: str = "tamarisk"
    env_overrides: dict = field(default_factory=dict)
    horizon: Optional[int] = None
    n_total: int = 9000
    n_test: int = 5000
    sizes: tuple = (250, 500, 1000, 2000)
    deltas: tuple = DELTAS
    m: int = 100
    delta_prime: float = 0.2
    tree_count: int = 1000
    min_leaf: int = 20
    ucb_confidence: Optional[float] = None
    coverage_confidence: float = 0.99
    failure_size: int = 2000
    failure_delta: float = 0.1
    seed: int = 2021
    workers: int = 1

    def quick(self) -> "MdpStudyConfig":
        return replace(self, n_total=3000, n_test=1000, sizes=(250, 500, 1000), tree_count=50,
                       failure_size=1000)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"], d["deltas"] = list(self.sizes), list(self.deltas)
        return d


def simulate_for_study(config: MdpStudyConfig) -> list:
    env = make_env(config.env, **config.env_overrides)
    return sample_trajectories(env, config.n_total, config.horizon, derive_seed(config.seed, "simulate"),
                               workers=config.workers)


def run_mdp_study(config: MdpStudyConfig = MdpStudyConfig(), trajectories=None) -> dict:
    """QR, SQBox, SQBoxCI, CTE and CTECI on a random train/calibration/test split.

    The test set is the first ``n_test`` rows of a seeded permutation.  The
    remaining rows are halved; training and calibration sets of size ``s``
    are prefixes of the two halves, so larger sizes extend smaller ones.
    """
    if trajectories is None:
        trajectories = simulate_for_study(config)
    data = trajectories if isinstance(trajectories, TrajectorySet) else TrajectorySet.from_records(trajectories)
    if len(data) != config.n_total:
        raise ValueError(f"expected {config.n_total} trajectories, got {len(data)}")
    env = make_env(config.env, **config.env_overrides)
    perm = stream(config.seed, "partition").permutation(len(data))
    test = data.take(perm[:config.n_test])
    pool = perm[config.n_test:]
    half = pool.size // 2
    if max(config.sizes) > half:
        raise ValueError(f"size {max(config.sizes)} exceeds the {half} rows available per split")

    alphas = sorted({config.delta_prime / 2, 1 - config.delta_prime / 2}
                    | {a for dl in config.deltas for a in (dl / 2, 1 - dl / 2)})
    col = {a: i for i, a in enumerate(alphas)}
    strategies = {"strict": STRICT, "ucb": _ucb(config.ucb_confidence)}
    conf = config.coverage_confidence
    records = []
    failure = None
    for s in config.sizes:
        train = data.take(pool[:s])
        calib = data.take(pool[half:half + s])
        params = ForestParams(config.tree_count, config.min_leaf, "third", derive_seed(config.seed, "forest", s))
        forests = fit_timestep_forests(train.features, train.behavior, params)
        qc = forests.predict(calib.features, alphas)
        qt = forests.predict(test.features, alphas)
        inner_lo, inner_hi = col[config.delta_prime / 2], col[1 - config.delta_prime / 2]
        inner_width = (qt[..., inner_hi] - qt[..., inner_lo]).mean(axis=0).tolist()
        for dl in config.deltas:
            lo_i, hi_i = col[dl / 2], col[1 - dl / 2]
            base = {"env": config.env, "size": s, "delta": dl, "target": 1 - dl}

            qr = coverage(qt[..., lo_i], qt[..., hi_i], test.behavior, conf)
            records.append(_record(base, "qr", qr))

            for name, strat in (("sqbox", "strict"), ("sqboxci", "ucb")):
                sigma, beta, ok, _ = calibrate_sqbox(qc[..., inner_lo], qc[..., inner_hi], calib.behavior,
                                                     config.m, dl, strategies[strat])
                pad = beta * sigma
                rep = coverage(qt[..., inner_lo] - pad, qt[..., inner_hi] + pad, test.behavior, conf)
                rec = _record(base, name, rep)
                rec.update(beta=beta, guaranteed=ok, sigma=sigma.tolist(), inner_width_by_t=inner_width)
                records.append(rec)
                if name == "sqboxci" and s == config.failure_size and math.isclose(dl, config.failure_delta):
                    keys = [env.summary_key(f) for f in test.features]
                    failure = failure_table(keys, ~rep["covered"], dl).to_dict()
                    failure.update(size=s, method=name)

            totals_test = exceedance(test.behavior, qt[..., lo_i], qt[..., hi_i]).sum(axis=1)
            for name, strat in (("cte", "strict"), ("cteci", "ucb")):
                c_hat, ok, _ = calibrate_cte(qc[..., lo_i], qc[..., hi_i], calib.behavior, dl, strategies[strat])
                hits = int(np.sum(totals_test <= c_hat))
                width = qt[..., hi_i] - qt[..., lo_i]
                records.append({
                    **base,
                    "method": name,
                    "n": config.n_test,
                    "hits": hits,
                    "coverage": hits / config.n_test,
                    "coverage_lower": coverage_ci_lower(hits, config.n_test, conf),
                    "mean_width": float(width.mean()),
                    "width_by_t": width.mean(axis=0).tolist(),
                    "c_hat": c_hat,
                    "guaranteed": ok,
                })
    return {"study": f"mdp-{config.env}", "config": config.to_dict(), "records": records,
            "failure_table": failure}


def _record(base: dict, method: str, rep: dict) -> dict:
    out = {**base, "method": method}
    out.update({k: v for k, v in rep.items() if k != "covered"})
    return out
