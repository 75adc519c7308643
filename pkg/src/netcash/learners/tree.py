"""CART trees and bagged forests.

Split search is exhaustive over midpoints between consecutive distinct
sorted values of every candidate feature, vectorized across features with
cumulative sums. Regression minimizes the children's summed squared error,
classification the size-weighted Gini impurity. Ties resolve to the lowest
feature index, then the lowest threshold. Rows with ``x <= threshold`` go left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # leaf mean, or leaf class code
    n_samples: np.ndarray
    node_depth: np.ndarray

    @property
    def depth(self) -> int:
        return int(self.node_depth.max())

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        m = X.shape[0]
        node = np.zeros(m, dtype=np.intp)
        rows = np.arange(m)
        for _ in range(self.depth + 1):
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            go_left = X[rows, np.maximum(feat, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, nxt, node)
        return self.value[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "n_samples", "node_depth")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.intp),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.intp),
            right=np.asarray(d["right"], dtype=np.intp),
            value=np.asarray(d["value"]),
            n_samples=np.asarray(d["n_samples"], dtype=np.intp),
            node_depth=np.asarray(d["node_depth"], dtype=np.intp),
        )


def _split_cost(xs, ys_sorted, y_node, task, n_classes):
    """Child cost for cutting after each sorted position; shape (n-1, f). Also the parent cost."""
    n = xs.shape[0]
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    if task == REGRESSION:
        cs = np.cumsum(ys_sorted, axis=0)
        cq = np.cumsum(ys_sorted * ys_sorted, axis=0)
        tot, totq = cs[-1], cq[-1]
        cs, cq = cs[:-1], cq[:-1]
        cost = (cq - cs * cs / nl) + ((totq - cq) - (tot - cs) ** 2 / nr)
        parent = float(totq[0] - tot[0] ** 2 / n)
        return cost, parent
    counts = np.cumsum(ys_sorted, axis=0)          # (n, f, K)
    total = counts[-1]
    cl = counts[:-1]
    cr = total - cl
    cost = (nl - (cl * cl).sum(axis=2) / nl) + (nr - (cr * cr).sum(axis=2) / nr)
    tot = np.bincount(y_node, minlength=n_classes).astype(float)
    parent = float(n - (tot * tot).sum() / n)
    return cost, parent


def best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int, task: str, n_classes: int = 0):
    """Return ``(feature_column, threshold)`` of the best valid split, or ``None``."""
    n, f = X.shape
    if f == 0 or n < 2 * min_samples_leaf or n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    if task == REGRESSION:
        yc = y - y.mean()
        ys = yc[order]
    else:
        ys = np.eye(n_classes)[y][order]
    cost, parent = _split_cost(xs, ys, y, task, n_classes)
    if parent <= 0:
        return None
    pos = np.arange(1, n)
    size_ok = (pos >= min_samples_leaf) & (n - pos >= min_samples_leaf)
    valid = (xs[1:] > xs[:-1]) & size_ok[:, None]
    cost = np.where(valid, cost, np.inf)
    flat = cost.T.ravel()
    j = int(np.argmin(flat))
    best = flat[j]
    if not np.isfinite(best) or best >= parent * (1 - 1e-12):
        return None
    col, p = divmod(j, n - 1)
    lo, hi = xs[p, col], xs[p + 1, col]
    thr = (lo + hi) / 2
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr)


def _leaf_value(y, task, n_classes):
    if task == REGRESSION:
        return float(y.mean())
    return int(np.bincount(y, minlength=n_classes).argmax())


def grow_tree(X, y, *, task=REGRESSION, n_classes=0, max_depth=8, min_samples_leaf=1,
              max_features=None, rng=None) -> Tree:
    """Grow one tree greedily.

    ``max_features`` below the feature count draws that many candidate
    features per node from ``rng`` without replacement.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    nodes = {"feature": [], "threshold": [], "left": [], "right": [], "value": [], "n_samples": [], "node_depth": []}

    def add(feature, thr, value, n, depth):
        for k, v in zip(nodes, (feature, thr, -1, -1, value, n, depth)):
            nodes[k].append(v)
        return len(nodes["feature"]) - 1

    def build(idx, depth):
        y_node = y[idx]
        value = _leaf_value(y_node, task, n_classes)
        split = None
        if depth < max_depth:
            if max_features is not None and max_features < p:
                feats = np.sort(rng.choice(p, size=max_features, replace=False))
            else:
                feats = np.arange(p)
            split = best_split(X[np.ix_(idx, feats)], y_node, min_samples_leaf, task, n_classes)
        if split is None:
            return add(-1, np.nan, value, len(idx), depth)
        col, thr = split
        feature = int(feats[col])
        me = add(feature, thr, value, len(idx), depth)
        mask = X[idx, feature] <= thr
        nodes["left"][me] = build(idx[mask], depth + 1)
        nodes["right"][me] = build(idx[~mask], depth + 1)
        return me

    build(np.arange(X.shape[0]), 0)
    return Tree(
        feature=np.asarray(nodes["feature"], dtype=np.intp),
        threshold=np.asarray(nodes["threshold"], dtype=float),
        left=np.asarray(nodes["left"], dtype=np.intp),
        right=np.asarray(nodes["right"], dtype=np.intp),
        value=np.asarray(nodes["value"], dtype=float if task == REGRESSION else np.intp),
        n_samples=np.asarray(nodes["n_samples"], dtype=np.intp),
        node_depth=np.asarray(nodes["node_depth"], dtype=np.intp),
    )


def n_candidate_features(p: int, feature_fraction: float) -> int:
    return max(1, int(round(feature_fraction * p))) if p else 0


def grow_forest(X, y, *, task=REGRESSION, n_classes=0, n_trees=10, max_depth=8, min_samples_leaf=1,
                feature_fraction=1.0, seed=0) -> list[Tree]:
    """Bagged trees. One generator drives everything: per tree, first the
    bootstrap draw ``rng.integers(0, n, n)``, then any per-node feature draws."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    rng = np.random.default_rng(seed)
    m = n_candidate_features(p, feature_fraction)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, n)
        trees.append(grow_tree(X[boot], y[boot], task=task, n_classes=n_classes, max_depth=max_depth,
                               min_samples_leaf=min_samples_leaf,
                               max_features=m if m < p else None, rng=rng))
    return trees


def forest_predict(trees: list[Tree], X: np.ndarray, task=REGRESSION, n_classes=0) -> np.ndarray:
    preds = np.stack([t.predict(X) for t in trees])
    if task == REGRESSION:
        return preds.mean(axis=0)
    votes = np.zeros((X.shape[0], n_classes))
    for row in preds:
        votes[np.arange(X.shape[0]), row] += 1
    return votes.argmax(axis=1)
