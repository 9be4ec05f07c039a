"""Farthest point sampling, midpoint interpolation and patch handling.

These are the parts of the pipeline that generate points; none of them
depend on a learned model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .cloud import NormalizeTransform, PointCloud, as_points, normalize
from .errors import PoolExhaustedError, ValidationError
from .spatial import SpatialIndex, pairwise_distance


@dataclass(frozen=True)
class InterpolationConfig:
    rate: float = 4.0
    k_neighbors: int = 16
    fps_seed: int = 0
    drop_original: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate >= 1):
            raise ValidationError(f"upsampling rate must be a finite number >= 1, got {self.rate}", "sampling")
        if self.k_neighbors < 1:
            raise ValidationError(f"k_neighbors must be >= 1, got {self.k_neighbors}", "sampling")


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 256
    overlap_factor: float = 3.0
    seed_count: Optional[int] = None

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValidationError(f"patch_size must be >= 1, got {self.patch_size}", "sampling")
        if not self.overlap_factor > 0:
            raise ValidationError(f"overlap_factor must be positive, got {self.overlap_factor}", "sampling")


def target_count(rate, n):
    """``round(rate * n)`` with halves rounded up."""
    return int(math.floor(rate * n + 0.5))


def fps(cloud, m, seed=0):
    """Greedy farthest point sampling.

    Starts from index ``seed``; each further pick maximizes the distance to
    the closest already-picked point, ties going to the lowest index.
    Returns an int64 array of ``m`` indices.
    """
    pts = as_points(cloud)
    n = len(pts)
    m = int(m)
    if m < 1 or m > n:
        raise ValidationError(f"cannot sample {m} points from a cloud of {n}", "sampling")
    if not 0 <= seed < n:
        raise ValidationError(f"seed index {seed} out of range for {n} points", "sampling")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed
    mind = pairwise_distance(pts, pts[seed])
    mind[seed] = -np.inf
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        selected[i] = nxt
        np.minimum(mind, pairwise_distance(pts, pts[nxt]), out=mind)
        mind[nxt] = -np.inf
    return selected


def midpoint_pool(cloud, k, exclude=None):
    """Deduplicated midpoints between every point and each of its k neighbors.

    Pool order follows generation order (point, then neighbor rank).  Rows
    equal to a point in ``exclude`` are dropped as well.
    """
    pts = as_points(cloud)
    idx, _ = SpatialIndex(pts).self_knn(k)
    mids = ((pts[:, None, :] + pts[idx]) / 2.0).reshape(-1, 3)
    head = np.empty((0, 3)) if exclude is None else as_points(exclude)
    stacked = np.concatenate([head, mids])
    _, first, inverse = np.unique(stacked, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rows = np.arange(len(head), len(stacked))
    keep = (first[inverse[rows]] == rows)
    return mids[keep]


def midpoint_interpolate(cloud, cfg: InterpolationConfig = InterpolationConfig()) -> PointCloud:
    """Upsample by midpoint generation followed by farthest point sampling.

    The result holds ``round(rate * N)`` points.  Unless ``cfg.drop_original``
    is set, the input points come first and the sampled midpoints follow.
    """
    pts = as_points(cloud)
    n = len(pts)
    if cfg.rate < 1:
        raise ValidationError(f"upsampling rate must be >= 1, got {cfg.rate}", "sampling")
    if n < 2:
        raise ValidationError("need at least 2 points to interpolate", "sampling")
    if not 1 <= cfg.k_neighbors < n:
        raise ValidationError(
            f"k_neighbors={cfg.k_neighbors} must lie in [1, {n - 1}] for {n} points", "sampling"
        )
    total = target_count(cfg.rate, n)
    need = total if cfg.drop_original else total - n
    if need == 0:
        return PointCloud(pts)
    pool = midpoint_pool(pts, cfg.k_neighbors, exclude=None if cfg.drop_original else pts)
    if need > len(pool):
        raise PoolExhaustedError(
            f"only {len(pool)} distinct midpoints available but {need} are required; "
            f"raise k_neighbors (currently {cfg.k_neighbors})",
            "sampling",
        )
    chosen = pool[fps(pool, need, cfg.fps_seed)]
    if cfg.drop_original:
        return PointCloud(chosen)
    return PointCloud(np.concatenate([pts, chosen]))


def interpolate_auto_k(cloud, cfg: InterpolationConfig, max_k=128):
    """Like :func:`midpoint_interpolate` but doubles k until the pool suffices.

    Returns ``(cloud, k_used)``.
    """
    n = len(as_points(cloud))
    k = cfg.k_neighbors
    while True:
        try:
            out = midpoint_interpolate(cloud, InterpolationConfig(cfg.rate, k, cfg.fps_seed, cfg.drop_original))
            return out, k
        except PoolExhaustedError:
            if k >= min(max_k, n - 1):
                raise
            k = min(2 * k, max_k, n - 1)


def patch_indices(cloud, cfg: PatchConfig) -> List[np.ndarray]:
    """Index sets of kNN patches around FPS seeds covering every point."""
    pts = as_points(cloud)
    n = len(pts)
    size = int(cfg.patch_size)
    if not 1 <= size <= n:
        raise ValidationError(f"patch_size={size} must lie in [1, {n}]", "sampling")
    count = cfg.seed_count
    if count is None:
        count = math.ceil(cfg.overlap_factor * n / size)
    count = max(1, min(int(count), n))
    index = SpatialIndex(pts)
    seeds = fps(pts, count, 0)
    idx, _ = index.query(pts[seeds], size)
    patches = list(idx)
    covered = np.zeros(n, dtype=bool)
    covered[idx.reshape(-1)] = True
    # kNN patches around FPS seeds almost always cover the cloud; close any gap
    # with extra patches centered on the first uncovered point.
    while not covered.all():
        extra = int(np.flatnonzero(~covered)[0])
        row, _ = index.query(pts[extra][None, :], size)
        patches.append(row[0])
        covered[row[0]] = True
    return patches


def extract_patches(cloud, cfg: PatchConfig = PatchConfig()) -> List[Tuple[PointCloud, NormalizeTransform]]:
    pts = as_points(cloud)
    return [normalize(pts[idx]) for idx in patch_indices(pts, cfg)]


def merge_patches(patches, target: int) -> PointCloud:
    """Concatenate denormalized patches and FPS them down to ``target`` points."""
    arrays = [as_points(p) for p in patches]
    total = sum(len(a) for a in arrays)
    if total < target:
        raise ValidationError(f"patches hold {total} points, fewer than the target {target}", "sampling")
    merged = np.concatenate(arrays)
    return PointCloud(merged[fps(merged, target, 0)])
