"""Regression random forests (CART, variance reduction) for the PC trends.

Trees are grown by a compiled kernel; all randomness (bootstrap rows and the
per-node feature draw) comes from ``numpy.random.Generator`` streams keyed on
``(seed, tree_index)`` so results do not depend on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .core import InputError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int = 3
    min_node: int = 5
    bootstrap: bool = True
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Forest:
    """Flat node tables for all trees, concatenated.

    ``left``/``right`` are tree-local node ids (-1 for leaves); tree ``i``
    owns rows ``offsets[i]:offsets[i + 1]``.
    """

    n_features: int
    mtry: int
    min_node: int
    seed: int
    bootstrap: bool
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    reduction: np.ndarray
    n_node: np.ndarray

    @property
    def n_trees(self):
        return self.offsets.size - 1

    def tables(self):
        return dict(offsets=self.offsets, feature=self.feature, threshold=self.threshold,
                    left=self.left, right=self.right, value=self.value,
                    reduction=self.reduction, n_node=self.n_node)

    def subset(self, n):
        """Forest made of the first ``n`` trees."""
        end = self.offsets[n]
        t = {k: v[:end] for k, v in self.tables().items() if k != "offsets"}
        return Forest(self.n_features, self.mtry, self.min_node, self.seed, self.bootstrap,
                      self.offsets[:n + 1].copy(), **t)


@numba.njit(cache=True, nogil=True)
def _grow(X, y, mtry, min_node, keys):
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    reduction = np.zeros(cap)
    n_node = np.zeros(cap, np.int64)
    rows = np.arange(n)
    tmp = np.empty(n, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_id = np.empty(cap, np.int64)
    sp = 0
    st_s[0] = 0
    st_e[0] = n
    st_id[0] = 0
    sp = 1
    count = 1
    while sp > 0:
        sp -= 1
        s = st_s[sp]
        e = st_e[sp]
        node = st_id[sp]
        m = e - s
        mean = 0.0
        for i in range(s, e):
            mean += y[rows[i]]
        mean /= m
        value[node] = mean
        n_node[node] = m
        yc = np.empty(m)
        sse = 0.0
        for i in range(m):
            yc[i] = y[rows[s + i]] - mean
            sse += yc[i] * yc[i]
        if m < 2 * min_node or sse <= 0.0:
            continue
        tot = 0.0
        for i in range(m):
            tot += yc[i]
        forder = np.argsort(keys[node])
        best_red = 0.0
        best_f = -1
        best_thr = 0.0
        xs = np.empty(m)
        for q in range(mtry):
            f = forder[q]
            for i in range(m):
                xs[i] = X[rows[s + i], f]
            o = np.argsort(xs, kind="mergesort")
            cl = 0.0
            cl2 = 0.0
            for i in range(m - 1):
                v = yc[o[i]]
                cl += v
                cl2 += v * v
                nl = i + 1
                nr = m - nl
                if nl < min_node:
                    continue
                if nr < min_node:
                    break
                lo = xs[o[i]]
                hi = xs[o[i + 1]]
                if lo == hi:
                    continue
                sse_l = cl2 - cl * cl / nl
                sse_r = (sse - cl2) - (tot - cl) * (tot - cl) / nr
                red = sse - sse_l - sse_r
                if red > best_red:
                    best_red = red
                    best_f = f
                    thr = 0.5 * (lo + hi)
                    if thr >= hi:
                        thr = lo
                    best_thr = thr
        if best_f < 0 or best_red <= 1e-12 * sse:
            continue
        nl = 0
        for i in range(s, e):
            if X[rows[i], best_f] <= best_thr:
                tmp[nl] = rows[i]
                nl += 1
        k = nl
        for i in range(s, e):
            if X[rows[i], best_f] > best_thr:
                tmp[k] = rows[i]
                k += 1
        for i in range(m):
            rows[s + i] = tmp[i]
        feature[node] = best_f
        threshold[node] = best_thr
        reduction[node] = best_red
        left[node] = count
        right[node] = count + 1
        # push right first so the left subtree is expanded first
        st_s[sp] = s + nl
        st_e[sp] = e
        st_id[sp] = count + 1
        sp += 1
        st_s[sp] = s
        st_e[sp] = s + nl
        st_id[sp] = count
        sp += 1
        count += 2
    return (feature[:count], threshold[:count], left[:count], right[:count],
            value[:count], reduction[:count], n_node[:count])


@numba.njit(cache=True, nogil=True)
def _predict(offsets, feature, threshold, left, right, value, X):
    n = X.shape[0]
    n_trees = offsets.size - 1
    out = np.zeros((n_trees, n))
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, i] = value[base + node]
    return out


def _tree_rng(seed, tree):
    return np.random.default_rng([int(seed), int(tree)])


def _fit_tree(X, y, cfg, tree):
    rng = _tree_rng(cfg.seed, tree)
    n, p = X.shape
    rows = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
    keys = rng.random((2 * n + 1, p))
    return rows, _grow(X[rows], y[rows], cfg.mtry, cfg.min_node, keys)


def fit_forest(X, y, cfg=ForestConfig(), threads=1, return_oob=False):
    """Fit a regression forest; optionally also return out-of-bag predictions.

    Rows never left out of bag get their in-sample prediction instead.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InputError(f"X {X.shape} and y {y.shape} are not aligned")
    n, p = X.shape
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise InputError("forest inputs contain missing or non-finite values")
    if n < 2 * cfg.min_node:
        raise InputError(f"need at least {2 * cfg.min_node} rows, got {n}")
    if not 1 <= cfg.mtry <= p:
        raise InputError(f"mtry must be in [1, {p}], got {cfg.mtry}")
    if cfg.n_trees < 1:
        raise InputError("n_trees must be >= 1")

    def job(t):
        return _fit_tree(X, y, cfg, t)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(job, range(cfg.n_trees)))
    else:
        results = [job(t) for t in range(cfg.n_trees)]

    sizes = [r[1][0].size for r in results]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cols = [np.concatenate([r[1][k] for r in results]) for k in range(7)]
    forest = Forest(p, cfg.mtry, cfg.min_node, cfg.seed, cfg.bootstrap, offsets, *cols)
    if not return_oob:
        return forest
    per_tree = _per_tree(forest, X)
    inbag = np.zeros((cfg.n_trees, n), dtype=bool)
    for t, (rows, _) in enumerate(results):
        inbag[t, rows] = True
    oob = ~inbag
    cnt = oob.sum(axis=0)
    oob_pred = np.where(cnt > 0, np.where(oob, per_tree, 0.0).sum(axis=0) / np.maximum(cnt, 1),
                        per_tree.mean(axis=0))
    return forest, oob_pred


def _per_tree(forest, X):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != forest.n_features:
        raise InputError(f"expected {forest.n_features} features, got {X.shape[1]}")
    return _predict(forest.offsets, forest.feature, forest.threshold, forest.left,
                    forest.right, forest.value, X)


def predict(forest, x):
    """Mean leaf value over trees; ``x`` is one feature vector or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = _per_tree(forest, x).mean(axis=0)
    return float(out[0]) if x.ndim == 1 else out


def variable_importance(forest):
    """Total variance reduction per feature summed over all split nodes."""
    split = forest.feature >= 0
    return np.bincount(forest.feature[split], weights=forest.reduction[split],
                       minlength=forest.n_features)
