"""Accuracy predictors over genes: CART regression trees, AdaBoost.R2 ensembles, ridge.

All models take genes as raw grid indices and predict accuracies clamped to [0, 1].
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.stats import rankdata

LOSSES = ("linear", "square", "exponential")


@dataclass(frozen=True)
class AccuracyRecord:
    gene: tuple
    accuracy: float
    source_tag: str = "initial_random"

    def __post_init__(self):
        object.__setattr__(self, "gene", tuple(int(g) for g in self.gene))
        if not math.isfinite(self.accuracy):
            raise ValueError("accuracy must be finite")


def records_xy(records: Sequence[AccuracyRecord]):
    X = np.array([r.gene for r in records], dtype=np.float64)
    y = np.array([r.accuracy for r in records], dtype=np.float64)
    return X, y


def _as_matrix(genes) -> np.ndarray:
    X = np.asarray(genes, dtype=np.float64)
    return X.reshape(1, -1) if X.ndim == 1 else X


@njit(cache=True)
def _grow(X, y, w, max_depth, min_split):
    n, nf = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if w[i] > 0:
            idx[m] = i
            m += 1
    idx = idx[:m]
    stack_node = np.zeros(cap, dtype=np.int64)
    stack_lo = np.zeros(cap, dtype=np.int64)
    stack_hi = np.zeros(cap, dtype=np.int64)
    stack_depth = np.zeros(cap, dtype=np.int64)
    top = 1
    stack_hi[0] = m
    n_nodes = 1
    buf = np.empty(m, dtype=np.int64)
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        W = 0.0
        S = 0.0
        ymin = np.inf
        ymax = -np.inf
        for p in range(lo, hi):
            i = idx[p]
            W += w[i]
            S += w[i] * y[i]
            ymin = min(ymin, y[i])
            ymax = max(ymax, y[i])
        value[node] = S / W
        if depth >= max_depth or hi - lo < min_split or ymax == ymin:
            continue
        best_score = S * S / W
        best_f = -1
        best_thr = 0.0
        cnt = hi - lo
        for f in range(nf):
            sub = idx[lo:hi]
            order = np.argsort(X[sub, f], kind="mergesort")
            wl = 0.0
            sl = 0.0
            for q in range(cnt - 1):
                i = sub[order[q]]
                wl += w[i]
                sl += w[i] * y[i]
                xa = X[i, f]
                xb = X[sub[order[q + 1]], f]
                if xa == xb:
                    continue
                wr = W - wl
                sr = S - sl
                score = sl * sl / wl + sr * sr / wr
                if score > best_score * (1.0 + 1e-12) + 1e-300:
                    best_score = score
                    best_f = f
                    best_thr = 0.5 * (xa + xb)
        if best_f < 0:
            continue
        nl = 0
        nr = 0
        for p in range(lo, hi):
            i = idx[p]
            if X[i, best_f] <= best_thr:
                idx[lo + nl] = i
                nl += 1
            else:
                buf[nr] = i
                nr += 1
        for q in range(nr):
            idx[lo + nl + q] = buf[q]
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        for child, clo, chi in ((n_nodes + 1, lo + nl, hi), (n_nodes, lo, lo + nl)):
            stack_node[top] = child
            stack_lo[top] = clo
            stack_hi[top] = chi
            stack_depth[top] = depth + 1
            top += 1
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _tree_predict(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int = 5

    def raw_predict(self, X) -> np.ndarray:
        return _tree_predict(_as_matrix(X), self.feature, self.threshold, self.left, self.right,
                             self.value)

    def predict(self, genes) -> np.ndarray:
        return np.clip(self.raw_predict(genes), 0.0, 1.0)

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def leaf_of(self, x) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return int(node)

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64), int(d["max_depth"]))


def _fit_tree_xy(X, y, w, max_depth, min_split=2) -> RegressionTree:
    parts = _grow(X, y, np.asarray(w, dtype=np.float64), max_depth, min_split)
    return RegressionTree(*parts, max_depth=max_depth)


def fit_tree(records, sample_weights=None, max_depth: int = 5) -> RegressionTree:
    """Greedy weighted-variance-reduction CART tree; leaves hold weighted means."""
    if len(records) == 0:
        raise ValueError("cannot fit a tree on zero records")
    X, y = records_xy(records)
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if w.shape != y.shape or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("sample weights must be non-negative, one per record, not all zero")
    return _fit_tree_xy(X, y, w, max_depth)


def weighted_median(preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted median: smallest value whose cumulative weight reaches half."""
    order = np.argsort(preds, axis=1, kind="stable")
    cum = np.cumsum(weights[order], axis=1)
    pick = np.argmax(cum >= 0.5 * cum[:, -1:], axis=1)
    rows = np.arange(preds.shape[0])
    return preds[rows, order[rows, pick]]


@dataclass
class BoostedTreeModel:
    trees: list
    stage_weights: list
    max_stages: int = 500
    loss: str = "linear"
    metadata: dict = field(default_factory=dict)

    def raw_predict(self, genes, n_stages: int | None = None) -> np.ndarray:
        X = _as_matrix(genes)
        t = len(self.trees) if n_stages is None else min(n_stages, len(self.trees))
        preds = np.column_stack([tree.raw_predict(X) for tree in self.trees[:t]])
        return weighted_median(preds, np.asarray(self.stage_weights[:t], dtype=np.float64))

    def predict(self, genes, n_stages: int | None = None) -> np.ndarray:
        return np.clip(self.raw_predict(genes, n_stages), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"kind": "adaboost_r2", "loss": self.loss, "max_stages": self.max_stages,
                "stage_weights": list(map(float, self.stage_weights)),
                "trees": [t.to_dict() for t in self.trees], "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d) -> "BoostedTreeModel":
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], list(d["stage_weights"]),
                   int(d["max_stages"]), d["loss"], dict(d.get("metadata", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BoostedTreeModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _fit_boosted_xy(X, y, max_depth, max_stages, seed, loss):
    if loss not in LOSSES:
        raise ValueError(f"unknown boosting loss {loss!r}")
    n = len(y)
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n)
    trees, alphas = [], []
    for _ in range(max_stages):
        cdf = np.cumsum(w)
        cdf /= cdf[-1]
        draw = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), n - 1)
        counts = np.bincount(draw, minlength=n).astype(np.float64)
        tree = _fit_tree_xy(X, y, counts, max_depth)
        err = np.abs(tree.raw_predict(X) - y)
        peak = err.max()
        if peak <= 0:
            # beta -> 0: a perfect learner outweighs every earlier stage in the median
            trees.append(tree)
            alphas.append(sum(alphas) + 1.0)
            break
        L = err / peak
        if loss == "square":
            L = L ** 2
        elif loss == "exponential":
            L = 1.0 - np.exp(-L)
        avg = float(np.sum(w * L))
        if avg <= 0:
            trees.append(tree)
            alphas.append(1.0)
            break
        if avg >= 0.5:
            if not trees:
                trees.append(tree)
                alphas.append(1.0)
            break
        beta = avg / (1.0 - avg)
        trees.append(tree)
        alphas.append(math.log(1.0 / beta))
        w = w * beta ** (1.0 - L)
        total = w.sum()
        if not total > 0:
            break
        w /= total
    return trees, alphas


def fit_boosted(records, max_depth: int = 5, max_stages: int = 500, seed: int = 0,
                loss: str = "linear") -> BoostedTreeModel:
    """AdaBoost.R2 over depth-limited CART trees (bootstrap resampling by instance weight)."""
    if len(records) < 2:
        raise ValueError("boosting needs at least two records")
    X, y = records_xy(records)
    trees, alphas = _fit_boosted_xy(X, y, max_depth, max_stages, seed, loss)
    meta = {"records": len(records), "seed": int(seed), "max_depth": int(max_depth)}
    return BoostedTreeModel(trees, alphas, max_stages, loss, meta)


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float

    def predict(self, genes) -> np.ndarray:
        return np.clip(_as_matrix(genes) @ self.coef + self.intercept, 0.0, 1.0)


def fit_ridge(records, alpha: float = 1.0) -> RidgeModel:
    X, y = records_xy(records)
    mx, my = X.mean(axis=0), y.mean()
    Xc = X - mx
    A = np.vstack([Xc, math.sqrt(alpha) * np.eye(X.shape[1])])
    b = np.concatenate([y - my, np.zeros(X.shape[1])])
    coef = np.linalg.lstsq(A, b, rcond=None)[0]
    return RidgeModel(coef, float(my - mx @ coef))


def predict(model, gene) -> float:
    """Predicted accuracy of a single gene, clamped to [0, 1]."""
    return float(model.predict(np.asarray(gene, dtype=np.float64))[0])


def loo_mse(fit_fn: Callable, records) -> float:
    """Leave-one-out mean squared error of ``fit_fn`` over ``records``."""
    records = list(records)
    if len(records) < 2:
        raise ValueError("leave-one-out needs at least two records")
    sq = 0.0
    for i, held in enumerate(records):
        model = fit_fn(records[:i] + records[i + 1:])
        sq += (predict(model, held.gene) - held.accuracy) ** 2
    return sq / len(records)


def spearman(pred, actual) -> float:
    pred, actual = np.asarray(pred, dtype=np.float64), np.asarray(actual, dtype=np.float64)
    if len(pred) < 3:
        raise ValueError("rank correlation needs at least three records")
    if np.ptp(actual) == 0 or np.ptp(pred) == 0:
        warnings.warn("rank correlation undefined for constant values", RuntimeWarning, stacklevel=2)
        return float("nan")
    ra, rb = rankdata(pred), rankdata(actual)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(ra @ rb / math.sqrt((ra @ ra) * (rb @ rb)))


def rank_correlation(model, holdout_records) -> float:
    """Spearman rho (average ranks for ties) between predicted and actual accuracies."""
    X, y = records_xy(holdout_records)
    if len(y) < 3:
        raise ValueError("rank correlation needs at least three records")
    return spearman(model.predict(X), y)
