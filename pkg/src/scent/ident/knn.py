"""Brute-force k-nearest neighbours on standardised features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KnnModel:
    X: np.ndarray  # standardised training rows
    y: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    k: int
    n_classes: int

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def neighbors(self, X: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances keep training order."""
        Q = self.transform(X)
        k = min(self.k, len(self.X))
        out = np.empty((len(Q), k), dtype=np.int64)
        for start in range(0, len(Q), chunk):
            q = Q[start:start + chunk]
            d2 = np.zeros((len(q), len(self.X)))
            for j in range(q.shape[1]):
                d2 += (q[:, j, None] - self.X[None, :, j]) ** 2
            out[start:start + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        nb = self.neighbors(X)
        labels = self.y[nb]
        proba = np.zeros((len(nb), self.n_classes))
        for c in range(self.n_classes):
            proba[:, c] = (labels == c).sum(axis=1)
        return proba / nb.shape[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def train_knn(X, y, n_classes: int | None = None, k: int = 5) -> KnnModel:
    """Store the training set; scaling parameters come from these rows only."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot train on zero rows")
    if k < 1:
        raise ValueError("k must be at least 1")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return KnnModel((X - mean) / scale, y, mean, scale, k, n_classes or int(y.max()) + 1)


def knn_predict(model: KnnModel, x) -> np.ndarray:
    """Class-probability vector for one query row (or a matrix of rows)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return model.predict_proba(x[None, :])[0]
    return model.predict_proba(x)
