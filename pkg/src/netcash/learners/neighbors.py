"""k-nearest neighbours on Euclidean distance.

Distance ties are broken by the lower training-row index (stable argsort).
With inverse-distance weighting, exact matches (distance 0) take all the weight.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512


def neighbors(train_X: np.ndarray, query_X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest training rows for every query row."""
    n = train_X.shape[0]
    k = min(k, n)
    idx_out = np.empty((query_X.shape[0], k), dtype=np.intp)
    dist_out = np.empty((query_X.shape[0], k))
    for start in range(0, query_X.shape[0], _CHUNK):
        q = query_X[start:start + _CHUNK]
        d2 = ((q[:, None, :] - train_X[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx_out[start:start + len(q)] = order
        dist_out[start:start + len(q)] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx_out, dist_out


def _weights(dist: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return np.ones_like(dist)
    exact = dist == 0
    with np.errstate(divide="ignore"):
        w = 1.0 / dist
    rows = exact.any(axis=1)
    w[rows] = exact[rows].astype(float)
    return w


def knn_regress(train_X, train_y, query_X, k: int, weighting: str) -> np.ndarray:
    idx, dist = neighbors(train_X, query_X, k)
    w = _weights(dist, weighting)
    return (w * train_y[idx]).sum(axis=1) / w.sum(axis=1)


def knn_classify(train_X, train_codes, n_classes: int, query_X, k: int, weighting: str) -> np.ndarray:
    """Weighted vote; equal votes resolve to the lowest class code."""
    idx, dist = neighbors(train_X, query_X, k)
    w = _weights(dist, weighting)
    votes = np.zeros((query_X.shape[0], n_classes))
    rows = np.repeat(np.arange(query_X.shape[0]), idx.shape[1])
    np.add.at(votes, (rows, train_codes[idx].ravel()), w.ravel())
    return votes.argmax(axis=1)
