"""Quantile regression forest.

Trees are grown on variance-reduction splits over axis-aligned thresholds
using every training row (no bootstrap); randomness enters only through
the order in which candidate features are examined at each node.  Each
leaf keeps the training rows that reached it, so a query's conditional
distribution is the average over trees of the uniform distribution on its
leaf's responses.

Tree arrays are fixed-size per forest, which lets trees be built in
parallel without any dependence of the result on the thread count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numba
import numpy as np
from numba import njit, prange

from .errors import DimensionMismatch, InsufficientData
from .seeding import stream

__all__ = [
    "Forest",
    "ForestParams",
    "fit_forest",
    "forest_weights",
    "predict_quantile",
    "predict_quantiles",
]

_LEAF = -1
# cumulative leaf weights are compared to alpha * n_trees with this slack
_CUM_TOL = 1e-12


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 1000
    min_leaf: int = 20
    features_per_split: Union[int, str] = "third"
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps not in ("third", "all"):
                raise ValueError(f"features_per_split must be a positive int, 'third' or 'all', got {fps!r}")
        elif fps < 1:
            raise ValueError("features_per_split must be >= 1")

    def mtry(self, d: int) -> int:
        fps = self.features_per_split
        if fps == "all":
            return d
        if fps == "third":
            return max(1, math.ceil(d / 3))
        return min(int(fps), d)

    def with_seed(self, seed: int) -> "ForestParams":
        return ForestParams(self.tree_count, self.min_leaf, self.features_per_split, seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Forest:
    params: ForestParams
    n_features: int
    responses: np.ndarray  # (n,) training responses
    feature: np.ndarray  # (T, max_nodes) split feature, -1 for leaves
    threshold: np.ndarray  # (T, max_nodes) go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray  # (T, max_nodes) offset of the leaf's rows in leaf_rows
    count: np.ndarray  # (T, max_nodes) number of rows in the leaf
    leaf_rows: np.ndarray  # (T, n) training row indices grouped by leaf
    n_nodes: np.ndarray  # (T,)
    _sorted: np.ndarray = field(init=False, repr=False)
    _leaf_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = np.argsort(self.responses, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        object.__setattr__(self, "_sorted", np.ascontiguousarray(self.responses[order]))
        object.__setattr__(self, "_leaf_rank", np.ascontiguousarray(rank[self.leaf_rows]).astype(np.int64))

    @property
    def tree_count(self) -> int:
        return self.feature.shape[0]

    @property
    def n_train(self) -> int:
        return self.responses.shape[0]

    def arrays(self) -> dict:
        return {
            "responses": self.responses,
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "start": self.start,
            "count": self.count,
            "leaf_rows": self.leaf_rows,
            "n_nodes": self.n_nodes,
        }

    def same_as(self, other: "Forest") -> bool:
        if self.params != other.params or self.n_features != other.n_features:
            return False
        a, b = self.arrays(), other.arrays()
        return all(np.array_equal(a[k], b[k]) for k in a)


@njit(cache=True)
def _best_split(X, y, idx, s, e, f, min_leaf, xbuf, ybuf, obuf):
    n = e - s
    for i in range(n):
        xbuf[i] = X[idx[s + i], f]
    order = np.argsort(xbuf[:n], kind="mergesort")
    total = 0.0
    for i in range(n):
        obuf[i] = ybuf[order[i]]
        total += obuf[i]
    best_gain = -np.inf
    best_thr = 0.0
    left_sum = 0.0
    for i in range(1, n):
        left_sum += obuf[i - 1]
        if i < min_leaf or n - i < min_leaf:
            continue
        xl = xbuf[order[i - 1]]
        xr = xbuf[order[i]]
        if not xl < xr:
            continue
        right_sum = total - left_sum
        gain = left_sum * left_sum / i + right_sum * right_sum / (n - i)
        if gain > best_gain:
            best_gain = gain
            thr = xl + (xr - xl) / 2.0
            best_thr = thr if thr < xr else xl
    return best_gain, best_thr


@njit(cache=True)
def _grow_tree(X, y, min_leaf, mtry, rand, feature, threshold, left, right, start, count, idx):
    n, d = X.shape
    for i in range(n):
        idx[i] = i
    xbuf = np.empty(n)
    ybuf = np.empty(n)
    obuf = np.empty(n)
    tmp = np.empty(n, dtype=np.int64)
    stack_node = np.empty(rand.shape[0], dtype=np.int64)
    stack_s = np.empty(rand.shape[0], dtype=np.int64)
    stack_e = np.empty(rand.shape[0], dtype=np.int64)
    feature[0] = _LEAF
    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        s = stack_s[top]
        e = stack_e[top]
        size = e - s
        feature[node] = _LEAF
        start[node] = s
        count[node] = size
        if size < 2 * min_leaf:
            continue
        y0 = y[idx[s]]
        pure = True
        for i in range(s + 1, e):
            if y[idx[i]] != y0:
                pure = False
                break
        if pure:
            continue
        for i in range(size):
            ybuf[i] = y[idx[s + i]]
        perm = np.argsort(rand[node], kind="mergesort")
        visited = 0
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        for pi in range(d):
            if visited >= mtry:
                break
            f = perm[pi]
            lo = X[idx[s], f]
            hi = lo
            for i in range(s + 1, e):
                v = X[idx[i], f]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if lo == hi:
                continue
            visited += 1
            gain, thr = _best_split(X, y, idx, s, e, f, min_leaf, xbuf, ybuf, obuf)
            if gain == -np.inf:
                continue
            better = gain > best_gain
            if gain == best_gain and (f < best_f or (f == best_f and thr < best_thr)):
                better = True
            if better:
                best_gain = gain
                best_f = f
                best_thr = thr
        if best_f < 0:
            continue
        # stable partition: left rows first, original order kept on each side
        nl = 0
        for i in range(s, e):
            if X[idx[i], best_f] <= best_thr:
                tmp[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if not X[idx[i], best_f] <= best_thr:
                tmp[nr] = idx[i]
                nr += 1
        for i in range(size):
            idx[s + i] = tmp[i]
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lnode
        right[node] = rnode
        count[node] = 0
        # push right first so the left subtree is numbered first
        stack_node[top] = rnode
        stack_s[top] = s + nl
        stack_e[top] = e
        top += 1
        stack_node[top] = lnode
        stack_s[top] = s
        stack_e[top] = s + nl
        top += 1
    return n_nodes


@njit(cache=True, parallel=True)
def _grow_forest(X, y, min_leaf, mtry, rand, feature, threshold, left, right, start, count, leaf_rows, n_nodes):
    for t in prange(feature.shape[0]):
        n_nodes[t] = _grow_tree(
            X, y, min_leaf, mtry, rand[t], feature[t], threshold[t], left[t], right[t],
            start[t], count[t], leaf_rows[t],
        )


@njit(cache=True)
def _find_leaf(x, feature, threshold, left, right):
    node = 0
    while feature[node] != _LEAF:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def _accumulate(x, feature, threshold, left, right, start, count, leaf_rank, w):
    for t in range(feature.shape[0]):
        leaf = _find_leaf(x, feature[t], threshold[t], left[t], right[t])
        c = count[t, leaf]
        inc = 1.0 / c
        s = start[t, leaf]
        for j in range(s, s + c):
            w[leaf_rank[t, j]] += inc


@njit(cache=True, parallel=True)
def _predict(Q, alphas, sorted_y, feature, threshold, left, right, start, count, leaf_rank, out):
    n_trees = feature.shape[0]
    n = sorted_y.shape[0]
    for qi in prange(Q.shape[0]):
        w = np.zeros(n)
        _accumulate(Q[qi], feature, threshold, left, right, start, count, leaf_rank, w)
        for a in range(alphas.shape[0]):
            target = alphas[a] * n_trees - _CUM_TOL * n_trees
            cum = 0.0
            pos = -1
            last = 0
            for j in range(n):
                if w[j] > 0.0:
                    cum += w[j]
                    last = j
                    if cum >= target:
                        pos = j
                        break
            if pos < 0:
                pos = last
            out[qi, a] = sorted_y[pos]


def _as_features(features, d=None) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d in (None, 1) else X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"features must be a 2-d array, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"features have {X.shape[1]} columns, forest expects {d}")
    if np.isnan(X).any():
        raise ValueError("features contain NaN")
    return np.ascontiguousarray(X)


def fit_forest(features, responses, params: ForestParams = ForestParams()) -> Forest:
    """Grow ``params.tree_count`` trees on all rows of ``features``."""
    X = _as_features(features)
    y = np.ascontiguousarray(np.asarray(responses, dtype=float).ravel())
    n, d = X.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} feature rows but {y.shape[0]} responses")
    if np.isnan(y).any():
        raise ValueError("responses contain NaN")
    if n < params.min_leaf or n == 0:
        raise InsufficientData(f"need at least min_leaf={params.min_leaf} rows, got {n}")
    T = params.tree_count
    max_nodes = 2 * (n // params.min_leaf) + 1
    rand = np.empty((T, max_nodes, d))
    for t in range(T):
        rng = stream(params.seed, "tree", t)
        rand[t] = rng.random((max_nodes, d))
    feature = np.full((T, max_nodes), _LEAF, dtype=np.int64)
    threshold = np.zeros((T, max_nodes))
    left = np.full((T, max_nodes), -1, dtype=np.int64)
    right = np.full((T, max_nodes), -1, dtype=np.int64)
    start = np.zeros((T, max_nodes), dtype=np.int64)
    count = np.zeros((T, max_nodes), dtype=np.int64)
    leaf_rows = np.empty((T, n), dtype=np.int64)
    n_nodes = np.zeros(T, dtype=np.int64)
    _grow_forest(X, y, params.min_leaf, params.mtry(d), rand, feature, threshold, left, right,
                 start, count, leaf_rows, n_nodes)
    return Forest(params, d, y, feature, threshold, left, right, start, count, leaf_rows, n_nodes)


def predict_quantiles(forest: Forest, features, alphas) -> np.ndarray:
    """Weighted empirical quantiles, shape ``(n_queries, len(alphas))``.

    Each returned value is the smallest training response whose cumulative
    forest weight reaches ``alpha``.
    """
    Q = _as_features(features, forest.n_features)
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any((a <= 0) | (a >= 1)):
        raise ValueError(f"alphas must lie in (0, 1), got {a}")
    # start states repeat a lot in practice; predict each distinct row once
    uniq, inverse = np.unique(Q, axis=0, return_inverse=True)
    out = np.empty((uniq.shape[0], a.size))
    _predict(np.ascontiguousarray(uniq), a, forest._sorted, forest.feature, forest.threshold,
             forest.left, forest.right, forest.start, forest.count, forest._leaf_rank, out)
    return out[inverse.ravel()]


def predict_quantile(forest: Forest, x, alpha: float) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != forest.n_features:
        raise DimensionMismatch(f"query has {x.shape[0]} features, forest expects {forest.n_features}")
    return float(predict_quantiles(forest, x[None, :], [alpha])[0, 0])


def forest_weights(forest: Forest, x) -> np.ndarray:
    """Weight each training response receives for query ``x`` (sums to 1)."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float).ravel())
    if x.shape[0] != forest.n_features:
        raise DimensionMismatch(f"query has {x.shape[0]} features, forest expects {forest.n_features}")
    w_rank = np.zeros(forest.n_train)
    _accumulate(x, forest.feature, forest.threshold, forest.left, forest.right, forest.start,
                forest.count, forest._leaf_rank, w_rank)
    order = np.argsort(forest.responses, kind="stable")
    w = np.empty_like(w_rank)
    w[order] = w_rank
    return w / forest.tree_count


def set_threads(workers: int | None) -> None:
    if workers:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
