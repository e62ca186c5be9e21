"""Exact k-nearest-neighbour search with deterministic tie breaking.

Neighbours are ordered by squared Euclidean distance, ties broken by the lower
row index.  A KD-tree proposes a few spare candidates per query; exact
distances are recomputed and re-sorted, and any query whose candidate list
cannot rule out a tie at the boundary falls back to a full scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

SPARE = 4


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def squared_distances(X, query) -> np.ndarray:
    """Squared Euclidean distances summed column by column in a fixed order.

    The fixed order makes results bit-reproducible by any scalar scan that
    accumulates ``(x_j - q_j)**2`` for ``j = 0, 1, ...``.
    """
    diff = np.asarray(X, dtype=float) - query
    out = diff[..., 0] * diff[..., 0]
    for j in range(1, diff.shape[-1]):
        out = out + diff[..., j] * diff[..., j]
    return out


def brute_force(X, queries, count):
    """Reference full scan, one query at a time."""
    X = np.asarray(X, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    count = min(count, len(X))
    idx = np.empty((len(queries), count), dtype=np.int64)
    dist = np.empty((len(queries), count))
    for i, q in enumerate(queries):
        d = squared_distances(X, q)
        order = np.lexsort((np.arange(len(X)), d))[:count]
        idx[i], dist[i] = order, d[order]
    return idx, dist


class NeighborIndex:
    """Search structure over a fixed (already standardized) point set."""

    def __init__(self, X):
        self.X = np.ascontiguousarray(np.asarray(X, dtype=float))
        if self.X.ndim != 2 or len(self.X) == 0:
            raise ValueError("neighbour index needs a nonempty 2-d point set")
        self._tree = cKDTree(self.X)

    def __len__(self):
        return len(self.X)

    def query(self, queries, count: int):
        """Return ``(indices, squared distances)``, each of shape (Q, count).

        ``count`` is capped at the number of stored points.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        n = len(self.X)
        count = min(count, n)
        if len(queries) == 0:
            return np.empty((0, count), dtype=np.int64), np.empty((0, count))
        spare = min(count + SPARE, n)
        _, cand = self._tree.query(queries, k=spare)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(queries), spare)
        d = squared_distances(self.X[cand], queries[:, None, :])
        order = np.lexsort((cand, d), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        idx, dist = cand[:, :count], d[:, :count]
        if spare < n:
            # a candidate beyond the list could tie with (or beat) the last kept one
            unsure = d[:, -1] <= dist[:, -1] * (1 + 1e-9)
            if np.any(unsure):
                rows = np.flatnonzero(unsure)
                idx[rows], dist[rows] = brute_force(self.X, queries[rows], count)
        return idx, dist
