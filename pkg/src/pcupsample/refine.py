"""Iterative point location refinement.

The main strategy descends the gradient of a distance field with a fixed
step.  Two baselines are kept for ablations: auto-regressive application of a
predicted displacement, and projection along the normalized gradient by the
predicted distance.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cloud import PointCloud, as_points
from .errors import NumericError, ValidationError
from .p2pnet import LearnedField
from .spatial import SpatialIndex

STRATEGIES = ("grad-descent", "auto-offset", "normalized-projection")


@dataclass(frozen=True)
class RefineConfig:
    strategy: str = "grad-descent"
    step: float = 0.02
    iterations: int = 10
    refresh_features: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(
                f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}", "refine"
            )
        if not self.step > 0:
            raise ValidationError(f"step must be positive, got {self.step}", "refine")
        if self.iterations < 0:
            raise ValidationError(f"iterations must be >= 0, got {self.iterations}", "refine")


@dataclass
class RefineTrace:
    mean_distance: List[float] = field(default_factory=list)
    cd_to_gt: Optional[List[float]] = None
    warnings: List[str] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        header = ["iteration", "mean_predicted_distance"]
        if self.cd_to_gt is not None:
            header.append("cd_to_gt")
        writer.writerow(header)
        for i, value in enumerate(self.mean_distance):
            row = [i, repr(float(value))]
            if self.cd_to_gt is not None:
                row.append(repr(float(self.cd_to_gt[i])))
            writer.writerow(row)
        return out.getvalue()

    def _record(self, values, pts, gt_index, gt):
        self.mean_distance.append(float(np.mean(values)))
        if gt_index is not None:
            forward = gt_index.nearest_batch(pts)[1].mean()
            backward = SpatialIndex(pts).nearest_batch(gt)[1].mean()
            self.cd_to_gt.append(float(forward + backward))
        m = self.mean_distance
        if len(m) >= 4 and m[-1] > m[-2] > m[-3] > m[-4]:
            self.warnings.append(
                f"mean predicted distance increased for 3 consecutive iterations (iteration {len(m) - 1})"
            )


def _check_finite(pts, iteration):
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise NumericError(
            f"non-finite update at iteration {iteration}, point {int(np.flatnonzero(bad)[0])}", "refine"
        )


def _start(cloud, gt):
    pts = np.array(as_points(cloud), dtype=np.float64)
    trace = RefineTrace(cd_to_gt=[] if gt is not None else None)
    gt_pts = None if gt is None else as_points(gt)
    gt_index = None if gt is None else SpatialIndex(gt_pts)
    return pts, trace, gt_pts, gt_index


def _evaluator(field, p0, cfg):
    if isinstance(field, LearnedField) and not cfg.refresh_features:
        return lambda pts: field.evaluate(pts, interp_at=p0)
    return field.evaluate


def refine(cloud, field, cfg: RefineConfig = RefineConfig(), gt=None):
    """Gradient descent ``p <- p - step * grad F(p)`` for ``cfg.iterations`` steps.

    All points move synchronously; order and count are preserved.  When
    ``gt`` is given the trace also records the Chamfer distance to it.
    Returns ``(refined cloud, trace)``.
    """
    if cfg.strategy != "grad-descent":
        raise ValidationError(f"refine() runs grad-descent, not {cfg.strategy}", "refine")
    pts, trace, gt_pts, gt_index = _start(cloud, gt)
    evaluate = _evaluator(field, pts.copy(), cfg)
    for t in range(cfg.iterations + 1):
        values, grads = evaluate(pts)
        trace._record(values, pts, gt_index, gt_pts)
        if t == cfg.iterations:
            break
        pts = pts - cfg.step * grads
        _check_finite(pts, t)
    return PointCloud(pts), trace


def refine_projection(cloud, field, cfg: RefineConfig, gt=None):
    """Move each point by its predicted distance along the normalized negative gradient."""
    if cfg.strategy != "normalized-projection":
        raise ValidationError(f"refine_projection() runs normalized-projection, not {cfg.strategy}", "refine")
    pts, trace, gt_pts, gt_index = _start(cloud, gt)
    evaluate = _evaluator(field, pts.copy(), cfg)
    for t in range(cfg.iterations + 1):
        values, grads = evaluate(pts)
        trace._record(values, pts, gt_index, gt_pts)
        if t == cfg.iterations:
            break
        norm = np.linalg.norm(grads, axis=1)
        move = norm >= 1e-12
        step = np.zeros_like(pts)
        step[move] = values[move, None] * grads[move] / norm[move, None]
        pts = pts - step
        _check_finite(pts, t)
    return PointCloud(pts), trace


def refine_offset(cloud, offset_model, cfg: RefineConfig, gt=None):
    """Auto-regressive update ``p <- p + step * offset(p)``.

    ``offset_model`` maps an ``(M, 3)`` array to ``(M, 3)`` displacements.
    The trace records the mean predicted displacement length.
    """
    if cfg.strategy != "auto-offset":
        raise ValidationError(f"refine_offset() runs auto-offset, not {cfg.strategy}", "refine")
    pts, trace, gt_pts, gt_index = _start(cloud, gt)
    for t in range(cfg.iterations + 1):
        delta = np.asarray(offset_model(pts), dtype=np.float64).reshape(pts.shape)
        trace._record(np.linalg.norm(delta, axis=1), pts, gt_index, gt_pts)
        if t == cfg.iterations:
            break
        pts = pts + cfg.step * delta
        _check_finite(pts, t)
    return PointCloud(pts), trace


def run(cloud, model, cfg: RefineConfig, gt=None):
    """Dispatch on ``cfg.strategy``."""
    if cfg.strategy == "grad-descent":
        return refine(cloud, model, cfg, gt)
    if cfg.strategy == "normalized-projection":
        return refine_projection(cloud, model, cfg, gt)
    return refine_offset(cloud, model, cfg, gt)
