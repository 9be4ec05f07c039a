"""Chamfer, Hausdorff and point-to-surface metrics, plus the noise harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud, TriMesh, as_points
from .errors import EmptyInputError, ValidationError
from .fields import mesh_distance_batch
from .spatial import SpatialIndex


def _directed(a, b):
    """Distance from each point of ``a`` to its nearest point in ``b``."""
    a, b = as_points(a), as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("metrics need non-empty clouds", "metrics")
    return SpatialIndex(b).nearest_batch(a)[1]


def chamfer(a, b, squared=False, mean_of_directions=False) -> float:
    """Sum of the two directional mean nearest-neighbor distances.

    ``squared`` averages squared distances instead; ``mean_of_directions``
    halves the sum.
    """
    ab, ba = _directed(a, b), _directed(b, a)
    if squared:
        ab, ba = ab * ab, ba * ba
    cd = float(ab.mean() + ba.mean())
    return cd / 2.0 if mean_of_directions else cd


def hausdorff(a, b, one_sided=False) -> float:
    forward = float(_directed(a, b).max())
    if one_sided:
        return forward
    return max(forward, float(_directed(b, a).max()))


def p2f(cloud, mesh: TriMesh) -> float:
    """Mean distance from the cloud's points to the mesh surface (one direction only)."""
    if len(mesh.faces) == 0:
        raise EmptyInputError("mesh has no faces", "metrics")
    return float(mesh_distance_batch(mesh, cloud).mean())


def add_noise(cloud, tau, rng) -> PointCloud:
    """Perturb every coordinate by ``tau`` times a standard normal draw."""
    if tau < 0:
        raise ValidationError("noise level must be >= 0", "metrics")
    pts = as_points(cloud)
    if tau == 0:
        return PointCloud(pts)
    return PointCloud(pts + tau * rng.standard_normal(pts.shape))


@dataclass
class MetricsReport:
    cd: float
    hd: float
    p2f: Optional[float] = None
    n_points: int = 0

    def to_json(self):
        out = {"cd": self.cd, "hd": self.hd}
        if self.p2f is not None:
            out["p2f"] = self.p2f
        out["n_points"] = self.n_points
        out["units"] = "model"
        out["scaled_1e3"] = {k: v * 1e3 for k, v in out.items() if k in ("cd", "hd", "p2f")}
        return out


REPORT_SCHEMA = {
    "type": "object",
    "required": ["cd", "hd", "n_points", "units", "scaled_1e3"],
    "properties": {
        "cd": {"type": "number", "minimum": 0},
        "hd": {"type": "number", "minimum": 0},
        "p2f": {"type": "number", "minimum": 0},
        "n_points": {"type": "integer", "minimum": 1},
        "units": {"const": "model"},
        "scaled_1e3": {
            "type": "object",
            "required": ["cd", "hd"],
            "properties": {k: {"type": "number", "minimum": 0} for k in ("cd", "hd", "p2f")},
        },
        "config_hash": {"type": "string"},
    },
}


def evaluate(pred, gt, mesh: Optional[TriMesh] = None, squared=False, mean_of_directions=False,
             one_sided=False) -> MetricsReport:
    return MetricsReport(
        cd=chamfer(pred, gt, squared=squared, mean_of_directions=mean_of_directions),
        hd=hausdorff(pred, gt, one_sided=one_sided),
        p2f=None if mesh is None else p2f(pred, mesh),
        n_points=len(as_points(pred)),
    )
