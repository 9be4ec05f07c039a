"""End-to-end upsampling pipelines used by the command line."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cloud import PointCloud, as_points, denormalize, normalize
from .fields import ExactOracle
from .p2pnet import LearnedField, LearnedOffsets, P2PNet
from .refine import RefineConfig, RefineTrace, run
from .sampling import (
    InterpolationConfig,
    PatchConfig,
    interpolate_auto_k,
    merge_patches,
    patch_indices,
)

log = logging.getLogger(__name__)


@dataclass
class UpsampleResult:
    output: PointCloud
    interpolated: PointCloud
    k_used: int
    traces: List[RefineTrace] = field(default_factory=list)


def model_for_patch(net: P2PNet, anchor):
    if net.out_channels == 3:
        return LearnedOffsets(net, anchor)
    return LearnedField(net, anchor)


def upsample(cloud, net: P2PNet, interp: InterpolationConfig = InterpolationConfig(),
             refine_cfg: RefineConfig = RefineConfig(), patches: PatchConfig = PatchConfig()) -> UpsampleResult:
    """Interpolate, refine each normalized patch with the network, then merge.

    Patches are cut from the interpolated cloud with ``rate * patch_size``
    points each, so they span the same surface area as the low-res patches
    the network was trained on.
    """
    pts = as_points(cloud)
    interpolated, k_used = interpolate_auto_k(pts, interp)
    if k_used != interp.k_neighbors:
        log.info("raised interpolation k from %d to %d to fill the midpoint pool", interp.k_neighbors, k_used)
    if refine_cfg.iterations == 0:
        return UpsampleResult(interpolated, interpolated, k_used)
    dense = interpolated.points
    size = min(len(dense), max(net.k + 1, int(round(interp.rate * patches.patch_size))))
    seeds = None if patches.seed_count is None else patches.seed_count
    groups = patch_indices(dense, PatchConfig(size, patches.overlap_factor, seeds))
    refined, traces = [], []
    for idx in groups:
        local, t = normalize(dense[idx])
        out, trace = run(local, model_for_patch(net, local), refine_cfg)
        refined.append(denormalize(out, t))
        traces.append(trace)
    merged = merge_patches(refined, len(dense))
    return UpsampleResult(merged, interpolated, k_used, traces)


def upsample_oracle(cloud, gt, interp: InterpolationConfig = InterpolationConfig(),
                    refine_cfg: RefineConfig = RefineConfig(step=0.01)) -> UpsampleResult:
    """Same interpolation, refined by gradient descent on the exact distance to ``gt``.

    The oracle has no coupling between points, so the whole cloud is refined
    at once in input units and no patching is needed.
    """
    interpolated, k_used = interpolate_auto_k(as_points(cloud), interp)
    if refine_cfg.iterations == 0:
        return UpsampleResult(interpolated, interpolated, k_used)
    out, trace = run(interpolated, ExactOracle(gt), refine_cfg, gt=gt)
    return UpsampleResult(out, interpolated, k_used, [trace])
