"""Least squares and ridge regression via centered normal equations."""

from __future__ import annotations

import numpy as np

RANK_JITTER = 1e-8


def fit_linear(X: np.ndarray, y: np.ndarray, lam: float = 0.0) -> tuple[np.ndarray, float]:
    """Return ``(coef, intercept)`` minimizing ``|y - Xb - c|^2 + lam |b|^2``.

    The intercept is never penalized. A rank-deficient unpenalized system
    falls back to ``lam = 1e-8`` instead of failing.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    y_mean = float(y.mean())
    if p == 0:
        return np.zeros(0), y_mean
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc
    if lam == 0 and np.linalg.matrix_rank(Xc) < p:
        lam = RANK_JITTER
    gram[np.diag_indices(p)] += lam
    coef = np.linalg.solve(gram, Xc.T @ yc)
    return coef, float(y_mean - x_mean @ coef)


def predict_linear(coef: np.ndarray, intercept: float, X: np.ndarray) -> np.ndarray:
    if coef.size == 0:
        return np.full(X.shape[0], intercept)
    return X @ coef + intercept
