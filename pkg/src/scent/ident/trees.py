"""CART decision trees (Gini) and bagged random forests on numpy arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DegenerateData(ValueError):
    pass


@dataclass
class TreeModel:
    """Flat binary tree; node ``i`` is a leaf when ``left[i] == -1``.

    Rows go left when ``x[feature] <= threshold``.
    """

    n_classes: int
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) leaf/class probabilities
    importance: np.ndarray  # unnormalised total weighted Gini decrease per feature

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.nonzero(self.left[node] >= 0)[0]
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.left[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    @property
    def feature_importances(self) -> np.ndarray:
        total = self.importance.sum()
        if total <= 0:
            return np.zeros(self.n_features)
        return self.importance / total


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float(np.dot(p, p))


def _best_split(X, y, idx, features, min_leaf, n_classes, eye):
    """Best (score, feature, threshold, n_left) over ``features``, or None.

    ``score`` is sum(left_counts**2)/n_left + sum(right_counts**2)/n_right,
    which is maximal exactly where the weighted child Gini is minimal.  Ties go
    to the lower feature index, then the lower threshold.
    """
    n = len(idx)
    ys_all = y[idx]
    best = None
    lo, hi = min_leaf - 1, n - min_leaf - 1  # split after sorted position i
    if lo > hi:
        return None
    total = np.bincount(ys_all, minlength=n_classes).astype(float)
    for f in sorted(features):
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = xs[lo:hi + 1] < xs[lo + 1:hi + 2]
        if not valid.any():
            continue
        lc = np.cumsum(eye[ys_all[order]], axis=0)[lo:hi + 1]
        rc = total - lc
        nl = np.arange(lo + 1, hi + 2, dtype=float)
        nr = n - nl
        score = (lc * lc).sum(axis=1) / nl + (rc * rc).sum(axis=1) / nr
        score = np.where(valid, score, -np.inf)
        i = int(np.argmax(score))
        s = score[i]
        if best is None or s > best[0]:
            a, b = xs[lo + i], xs[lo + i + 1]
            thr = a + (b - a) / 2.0
            if not a <= thr < b:
                thr = a
            best = (s, f, thr, lo + i + 1)
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, sample: Optional[np.ndarray] = None,
              max_depth: Optional[int] = None, min_leaf: int = 2, m_try: Optional[int] = None,
              features: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None) -> TreeModel:
    """Grow one CART tree.

    ``sample`` holds row indices (duplicates allowed, as drawn by bootstrap).
    ``m_try`` features are drawn per split from ``features``; when none of them
    admits a split, the remaining candidates are tried in the drawn order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_features = X.shape[1]
    idx0 = np.arange(len(X)) if sample is None else np.asarray(sample, dtype=np.int64)
    if len(idx0) == 0:
        raise DegenerateData("cannot grow a tree on zero rows")
    cand = np.arange(n_features) if features is None else np.asarray(sorted(features), dtype=np.int64)
    if m_try is None or m_try >= len(cand):
        m_try = len(cand)
    if m_try < len(cand) and rng is None:
        rng = np.random.default_rng(0)
    min_leaf = max(1, int(min_leaf))
    eye = np.eye(n_classes)

    feat, thr, left, right, value = [], [], [], [], []
    importance = np.zeros(n_features)

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feat) - 1, counts

    root, root_counts = new_node(idx0)
    stack = [(root, idx0, root_counts, 0)]
    while stack:
        node, idx, counts, depth = stack.pop()
        n = len(idx)
        if (counts > 0).sum() <= 1 or n < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        if m_try < len(cand):
            perm = cand[rng.permutation(len(cand))]
            best = _best_split(X, y, idx, perm[:m_try], min_leaf, n_classes, eye)
            k = m_try
            while best is None and k < len(perm):
                best = _best_split(X, y, idx, perm[k:k + 1], min_leaf, n_classes, eye)
                k += 1
        else:
            best = _best_split(X, y, idx, cand, min_leaf, n_classes, eye)
        if best is None:
            continue
        _, f, t, _ = best
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        lnode, lcounts = new_node(li)
        rnode, rcounts = new_node(ri)
        feat[node], thr[node], left[node], right[node] = f, t, lnode, rnode
        importance[f] += n * _gini(counts) - len(li) * _gini(lcounts) - len(ri) * _gini(rcounts)
        stack.append((rnode, ri, rcounts, depth + 1))
        stack.append((lnode, li, lcounts, depth + 1))

    return TreeModel(
        n_classes=n_classes,
        n_features=n_features,
        feature=np.array(feat, dtype=np.int64),
        threshold=np.array(thr, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        importance=importance / len(idx0),
    )


def train_tree(X, y, n_classes: Optional[int] = None, max_depth: Optional[int] = None, min_leaf: int = 2,
               features: Optional[Sequence[int]] = None) -> TreeModel:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DegenerateData("cannot train on zero rows")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    return grow_tree(X, y, n_classes, max_depth=max_depth, min_leaf=min_leaf, features=features)


@dataclass
class ForestModel:
    n_classes: int
    n_features: int
    trees: list[TreeModel] = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros((len(X), self.n_classes))
        for t in self.trees:
            out += t.predict_proba(X)
        return out / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    @property
    def feature_importances(self) -> np.ndarray:
        """Mean of per-tree normalised Gini importances, renormalised to sum to 1."""
        per_tree = [t.feature_importances for t in self.trees if t.importance.sum() > 0]
        if not per_tree:
            return np.full(self.n_features, 1.0 / self.n_features)
        imp = np.mean(per_tree, axis=0)
        return imp / imp.sum()


def train_forest(X, y, n_classes: Optional[int] = None, n_trees: int = 100, bootstrap: bool = True,
                 m_try: Optional[int] | str = "sqrt", max_depth: Optional[int] = None, min_leaf: int = 2,
                 seed: int = 0) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DegenerateData("cannot train on zero rows")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    d = X.shape[1]
    if m_try == "sqrt":
        m_try = max(1, math.ceil(math.sqrt(d)))
    elif m_try is None or m_try == "all":
        m_try = d
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]
    forest = ForestModel(n_classes, d)
    n = len(y)
    for rng in rngs:
        sample = rng.integers(0, n, n) if bootstrap else None
        forest.trees.append(grow_tree(X, y, n_classes, sample=sample, max_depth=max_depth,
                                      min_leaf=min_leaf, m_try=m_try, rng=rng))
    return forest


def feature_importance(forest: ForestModel, threshold: float = 0.06,
                       names: Optional[Sequence[str]] = None) -> tuple[list[tuple[str, float]], list[str]]:
    """Features ranked by importance, and those scoring strictly above ``threshold``."""
    imp = forest.feature_importances
    names = list(names) if names is not None else [f"f{i}" for i in range(len(imp))]
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    ranked = [(names[i], float(imp[i])) for i in order]
    return ranked, [name for name, score in ranked if score > threshold]
