"""Exact nearest-neighbor queries over a fixed point set.

A k-d tree proposes candidates; distances are then recomputed with one
canonical formula and sorted by ``(distance, index)`` so that results are
identical to a brute-force scan, ties included.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import as_points
from .errors import EmptyInputError, ValidationError

# candidates beyond k fetched from the tree so that boundary ties can be resolved
_PAD = 4
_REL_MARGIN = 1e-9


def pairwise_distance(a, b):
    """Euclidean distance between broadcastable ``(..., 3)`` arrays.

    The summation order is fixed, so every module that measures distance
    with this function gets bitwise-identical values for the same pair.
    """
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    return np.sqrt(sq)


class SpatialIndex:
    """Immutable exact kNN structure over a snapshot of a point cloud."""

    def __init__(self, cloud):
        pts = as_points(cloud)
        if len(pts) == 0:
            raise EmptyInputError("cannot build a spatial index over an empty cloud", "spatial")
        self._points = pts.copy()
        self._points.setflags(write=False)
        self._tree = cKDTree(self._points)

    @property
    def points(self):
        return self._points

    def __len__(self):
        return len(self._points)

    def query(self, queries, k, exclude=None, exclude_coincident=False):
        """Batched exact kNN.

        Args:
            queries: ``(M, 3)`` query coordinates.
            k: neighbors per query.
            exclude: optional length-M integer array; source index ``exclude[i]``
                is never returned for query ``i`` (use ``-1`` for none).
            exclude_coincident: skip source points whose coordinates equal the query.

        Returns:
            ``(indices, distances)``, both ``(M, k)``, sorted ascending by
            distance with ties broken by the lower source index.
        """
        q = as_points(queries)
        n = len(self._points)
        k = int(k)
        if k < 1:
            raise ValidationError(f"k must be positive, got {k}", "spatial")
        limit = n - 1 if exclude is not None else n
        if k > limit:
            raise ValidationError(
                f"k={k} exceeds the {limit} available candidates", "spatial"
            )
        m = min(n, k + _PAD + (1 if exclude is not None else 0))
        _, cand = self._tree.query(q, k=m)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(q), m)
        dist = pairwise_distance(q[:, None, :], self._points[cand])
        invalid = np.zeros(cand.shape, dtype=bool)
        if exclude is not None:
            invalid |= cand == np.asarray(exclude, dtype=np.int64)[:, None]
        if exclude_coincident:
            invalid |= (self._points[cand] == q[:, None, :]).all(axis=-1)

        masked = np.where(invalid, np.inf, dist)
        order = np.lexsort((cand, masked), axis=1)
        cand_sorted = np.take_along_axis(cand, order, axis=1)
        dist_sorted = np.take_along_axis(masked, order, axis=1)
        out_idx = cand_sorted[:, :k].copy()
        out_dist = dist_sorted[:, :k].copy()

        if m < n:
            # Rows whose k-th distance is not clearly below the farthest
            # candidate may be missing tied or excluded-shadowed points.
            kth = out_dist[:, -1]
            far = dist.max(axis=1)
            redo = ~(far > kth * (1.0 + _REL_MARGIN))
        else:
            redo = ~np.isfinite(out_dist[:, -1])
        for row in np.flatnonzero(redo):
            out_idx[row], out_dist[row] = self._scan(
                q[row],
                k,
                None if exclude is None else int(np.asarray(exclude)[row]),
                exclude_coincident,
            )
        return out_idx, out_dist

    def _scan(self, q, k, exclude, exclude_coincident):
        dist = pairwise_distance(q[None, :], self._points)
        valid = np.ones(len(dist), dtype=bool)
        if exclude is not None and exclude >= 0:
            valid[exclude] = False
        if exclude_coincident:
            valid &= ~(self._points == q[None, :]).all(axis=1)
        idx = np.flatnonzero(valid)
        if len(idx) < k:
            raise ValidationError(
                f"k={k} exceeds the {len(idx)} available candidates", "spatial"
            )
        order = np.lexsort((idx, dist[idx]))[:k]
        return idx[order], dist[idx][order]

    def knn(self, query, k, exclude_self=False):
        """kNN for one query as a list of ``(index, distance)`` pairs."""
        idx, dist = self.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k,
                               exclude_coincident=exclude_self)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]

    def self_knn(self, k):
        """kNN of every source point among the others (its own index excluded)."""
        return self.query(self._points, k, exclude=np.arange(len(self._points)))

    def nearest(self, query):
        return self.knn(query, 1)[0]

    def nearest_batch(self, queries):
        idx, dist = self.query(queries, 1)
        return idx[:, 0], dist[:, 0]


def build(cloud) -> SpatialIndex:
    return SpatialIndex(cloud)
