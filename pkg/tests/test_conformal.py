import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from conftest import brute_conformal_index, exact_binom_cdf
from trajpi.conformal import (
    STRICT,
    UCB,
    QuantileStrategy,
    Rank,
    binomial_cdf,
    binomial_cdf_table,
    conformal_index,
    conformal_quantile,
    conformal_rank,
    quantile_ucb,
    ucb_index,
)
from trajpi.errors import DeltaInvalid, DeltaTooSmall, EmptyScores


@pytest.mark.parametrize("n, delta, expected", [(19, 0.1, 18), (9, 0.5, 5), (100, 0.2, 81)])
def test_conformal_index_examples(n, delta, expected):
    assert conformal_index(n, delta) == expected


def test_conformal_index_boundary_equals_n():
    for n in (1, 4, 19, 99, 1949):
        assert conformal_index(n, 1 / (n + 1)) == n


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_conformal_index_rejects_invalid_delta(delta):
    with pytest.raises(DeltaInvalid):
        conformal_index(10, delta)


def test_conformal_index_rejects_small_delta():
    with pytest.raises(DeltaTooSmall):
        conformal_index(98, 0.01)
    assert conformal_index(99, 0.01) == 99


def test_conformal_index_matches_brute_force_exhaustively():
    deltas = [0.01, 0.02, 0.05, 0.1, 0.125, 0.2, 0.25, 1 / 3, 0.5, 0.75, 0.9]
    for n in range(1, 51):
        for d in deltas + [1 / (n + 1), k / (n + 1) if (k := max(1, n // 2)) else 0.5]:
            if Fraction(repr(float(d))) < Fraction(1, n + 1) or d >= 1:
                continue
            assert conformal_index(n, d) == brute_conformal_index(n, d), (n, d)


def test_binomial_cdf_examples():
    assert binomial_cdf(5, 5, 0.37) == 1.0
    assert binomial_cdf(2, 5, 0.5) == 0.5
    assert binomial_cdf(0, 1, 0.3) == pytest.approx(0.7, abs=1e-15)
    assert binomial_cdf(-1, 5, 0.5) == 0.0


def test_binomial_cdf_exact_on_small_grid():
    # every k for n <= 50 at a spread of p, compared bit for bit with rational arithmetic
    for n in range(1, 51):
        for p in (0.001, 0.05, 0.1, 0.3, 0.5, 0.77, 0.9, 0.99, 0.999):
            table = binomial_cdf_table(n, p)
            for k in range(n + 1):
                assert table[k] == float(exact_binom_cdf(k, n, p)), (k, n, p)


@pytest.mark.parametrize("n", [100, 800, 1950, 6400])
@pytest.mark.parametrize("p", [0.01, 0.2, 0.5, 0.8, 0.99])
def test_binomial_cdf_large_n_matches_scipy(n, p):
    ks = np.arange(n + 1)
    ours = binomial_cdf_table(n, p)
    ref = stats.binom.cdf(ks, n, p)
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_binomial_cdf_degenerate_p():
    assert binomial_cdf(0, 10, 0.0) == 1.0
    assert binomial_cdf(9, 10, 1.0) == 0.0
    assert binomial_cdf(10, 10, 1.0) == 1.0


def test_binomial_cdf_complement_identity():
    for n in (7, 50, 333, 2000):
        for p in (0.03, 0.4, 0.91):
            for k in range(0, n, max(1, n // 17)):
                total = binomial_cdf(k, n, p) + binomial_cdf(n - k - 1, n, 1 - p)
                assert abs(total - 1.0) < 1e-12


def test_ucb_index_by_direct_summation():
    # r = min{k : sum_{j<k} C(100, j) / 2^100 >= 0.95}
    cum, r = Fraction(0), None
    for k in range(1, 101):
        cum += Fraction(math.comb(100, k - 1), 2**100)
        if cum >= Fraction(95, 100):
            r = k
            break
    assert ucb_index(100, 0.5, 0.95) == Rank(r, True)
    scores = np.arange(1.0, 101.0)
    np.random.default_rng(0).shuffle(scores)
    assert quantile_ucb(scores, 0.5, 0.95) == float(r)


def test_ucb_flag_when_no_order_statistic_suffices():
    assert 1 - 0.99**50 == pytest.approx(binomial_cdf(49, 50, 0.99), abs=1e-15)
    assert binomial_cdf(49, 50, 0.99) < 0.99
    assert ucb_index(50, 0.99, 0.99) == Rank(50, False)
    assert quantile_ucb(np.arange(50.0), 0.99, 0.99) == 49.0


def test_ucb_index_is_minimal():
    for n in (10, 57, 400, 1950):
        for q in (0.3, 0.8, 0.95):
            for conf in (0.5, 0.9, 0.99):
                r, ok = ucb_index(n, q, conf)
                if ok:
                    assert binomial_cdf(r - 1, n, q) >= conf
                    assert r == 1 or binomial_cdf(r - 2, n, q) < conf
                else:
                    assert r == n and binomial_cdf(n - 1, n, q) < conf


def test_ucb_guarantee_is_exact_for_uniform_scores():
    # P(U_(r) >= q) = P(Bin(n, q) <= r - 1) for iid uniforms
    for n, q, conf in [(200, 0.9, 0.9), (1000, 0.5, 0.95), (57, 0.8, 0.99)]:
        r, ok = ucb_index(n, q, conf)
        assert ok
        assert stats.beta.sf(q, r, n - r + 1) == pytest.approx(binomial_cdf(r - 1, n, q), abs=1e-10)
        assert stats.beta.sf(q, r, n - r + 1) >= conf - 1e-12


def test_conformal_quantile_examples():
    scores = np.arange(1.0, 11.0)
    assert conformal_quantile(scores, 0.2, STRICT) == 9.0
    for strat in (STRICT, UCB, QuantileStrategy.ucb(0.9)):
        for d in (0.1, 0.2, 0.5):
            assert conformal_quantile(np.full(30, 3.5), d, strat) == 3.5


def test_conformal_quantile_errors():
    with pytest.raises(EmptyScores):
        conformal_quantile([], 0.1)
    with pytest.raises(ValueError):
        conformal_quantile([1.0, float("nan")], 0.5)
    with pytest.raises(DeltaTooSmall):
        conformal_quantile(np.arange(5.0), 0.1)


def test_ucb_rank_uses_inflated_target():
    n, d = 1950, 0.1
    q = (1 - d) * (n + 1) / n
    assert conformal_rank(n, d, UCB) == ucb_index(n, q, 1 - d)
    assert conformal_rank(n, d, QuantileStrategy.ucb(0.95)) == ucb_index(n, q, 0.95)
    # q clamps below 1 at the boundary delta
    assert conformal_rank(99, 0.01, UCB) == Rank(99, False)


def test_strategy_validation():
    with pytest.raises(ValueError):
        QuantileStrategy("median")
    with pytest.raises(ValueError):
        QuantileStrategy.ucb(1.0)
    assert UCB.confidence_for(0.05) == 0.95
    assert QuantileStrategy.ucb(0.9).confidence_for(0.05) == 0.9


def test_uniform_strict_coverage_monte_carlo():
    # n=999, delta=0.1: the fitted value's coverage is exactly the value itself
    # for uniforms, so averaging over 1000 refits estimates E[U_(900)] = 0.9
    rng = np.random.default_rng(2021)
    vals = np.array([conformal_quantile(rng.random(999), 0.1) for _ in range(1000)])
    fresh = rng.random((1000, 1000))
    mc = float(np.mean(fresh <= vals[:, None]))
    exact_mean = conformal_index(999, 0.1) / 1000
    assert 0.900 <= exact_mean <= 0.901
    se = np.sqrt(900 * 100 / (1000**2 * 1001) / 1000 + 0.09 / 1e6)
    assert abs(mc - exact_mean) < 4 * se
    assert abs(vals.mean() - exact_mean) < 4 * np.std(vals) / np.sqrt(vals.size)


@pytest.mark.parametrize("n, delta", [(19, 0.1), (9, 0.5), (49, 0.05)])
def test_marginal_coverage_within_theoretical_band(n, delta):
    # P(fresh <= strict quantile) = k/(n+1) lies in [1 - delta, 1 - delta + 1/(n+1)]
    rng = np.random.default_rng(n)
    trials = 200_000
    x = rng.standard_normal((trials, n + 1))
    k = conformal_index(n, delta)
    q = np.partition(x[:, :n], k - 1, axis=1)[:, k - 1]
    hits = int(np.sum(x[:, n] <= q))
    lo, hi = stats.binomtest(hits, trials).proportion_ci(0.999)
    assert hi >= 1 - delta and lo <= 1 - delta + 1 / (n + 1)
    assert k / (n + 1) >= 1 - delta and k / (n + 1) <= 1 - delta + 1 / (n + 1)
