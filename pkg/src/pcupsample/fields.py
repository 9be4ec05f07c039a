"""Distance fields: the exact nearest-point oracle and point-to-mesh distance.

Every field exposes batched ``evaluate(points) -> (values, gradients)`` plus
single-point ``value`` and ``gradient`` helpers.  The learned field lives in
:mod:`pcupsample.p2pnet` and follows the same interface.
"""

from __future__ import annotations

from typing import Protocol, Tuple

import numpy as np

from .cloud import TriMesh, as_points
from .spatial import SpatialIndex, pairwise_distance


class DistanceField(Protocol):
    def evaluate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        ...

    def value(self, q) -> float:
        ...

    def gradient(self, q) -> np.ndarray:
        ...


class FieldMixin:
    def value(self, q):
        return float(self.evaluate(np.asarray(q, dtype=np.float64).reshape(1, 3))[0][0])

    def gradient(self, q):
        return self.evaluate(np.asarray(q, dtype=np.float64).reshape(1, 3))[1][0]


class ExactOracle(FieldMixin):
    """Distance from a query to its nearest ground-truth point.

    The gradient is the unit vector pointing away from that nearest point.
    Queries lying exactly on a ground-truth point get a zero gradient.
    """

    def __init__(self, gt):
        self.index = gt if isinstance(gt, SpatialIndex) else SpatialIndex(gt)

    def values(self, points):
        return self.index.nearest_batch(as_points(points))[1]

    def evaluate(self, points):
        pts = as_points(points)
        idx, dist = self.index.nearest_batch(pts)
        offset = pts - self.index.points[idx]
        grad = np.zeros_like(offset)
        nz = dist > 0
        grad[nz] = offset[nz] / dist[nz, None]
        return dist, grad


def closest_points_on_triangles(p, a, b, c):
    """Closest point on triangle ``abc`` to ``p``; all arrays broadcast over ``(..., 3)``."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom

    shape = np.broadcast_shapes(p.shape, a.shape)
    out = a + ab * v_in[..., None] + ac * w_in[..., None]
    # region tests in reverse priority so earlier (vertex) regions overwrite later ones
    regions = [
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), lambda: b + (c - b) * w_bc[..., None]),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), lambda: a + ac * w_ac[..., None]),
        ((d6 >= 0) & (d5 <= d6), lambda: np.broadcast_to(c, shape)),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), lambda: a + ab * v_ab[..., None]),
        ((d3 >= 0) & (d4 <= d3), lambda: np.broadcast_to(b, shape)),
        ((d1 <= 0) & (d2 <= 0), lambda: np.broadcast_to(a, shape)),
    ]
    for mask, point in regions:
        if mask.any():
            out = np.where(mask[..., None], point(), out)
    return out


def mesh_distance_batch(mesh: TriMesh, points, chunk_elems=2_000_000):
    """Exact unsigned distance from each point to the nearest triangle of ``mesh``."""
    pts = as_points(points)
    tri = mesh.triangles
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    step = max(1, chunk_elems // max(1, len(tri)))
    out = np.empty(len(pts))
    for s in range(0, len(pts), step):
        q = pts[s : s + step, None, :]
        cp = closest_points_on_triangles(q, a, b, c)
        out[s : s + step] = pairwise_distance(q, cp).min(axis=1)
    return out


def mesh_distance(mesh: TriMesh, q) -> float:
    return float(mesh_distance_batch(mesh, np.asarray(q, dtype=np.float64).reshape(1, 3))[0])
