"""Training loop for the distance network.

Each step interpolates the low-res patch, jitters the interpolated points
with Gaussian noise to obtain query points, labels them with the exact
nearest-point distance to the high-res patch and minimizes the L1 error.
No iterative refinement happens here.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .cloud import PointCloud, as_points, read_cloud
from .errors import DataError, EmptyInputError, NumericError, ValidationError
from .fields import ExactOracle
from .p2pnet import P2PNet, l1_loss
from .sampling import InterpolationConfig, midpoint_interpolate

log = logging.getLogger(__name__)

AUGMENTATIONS = ("perturb", "rotate", "scale")
PERTURB_SIGMA = 0.005
SCALE_RANGE = (0.8, 1.2)
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    jitter_sigma: float = 0.02
    batch_size: int = 32
    epochs: int = 60
    lr: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 20
    k: int = 16
    d: int = 32
    rate: float = 4.0
    interp_k: int = 16
    rng_seed: int = 0
    augment: Tuple[str, ...] = ()
    head: str = "distance"
    regressor_input: str = "both"
    network_input: str = "interpolated"
    queries_per_point: int = 1

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr", "decay_every", "k", "d"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive", "training")
        if self.jitter_sigma < 0:
            raise ValidationError("jitter_sigma must be >= 0", "training")
        if not 0 < self.lr_decay <= 1:
            raise ValidationError("lr_decay must lie in (0, 1]", "training")
        unknown = set(self.augment) - set(AUGMENTATIONS)
        if unknown:
            raise ValidationError(f"unknown augmentation(s): {sorted(unknown)}", "training")
        if self.head not in ("distance", "offset"):
            raise ValidationError("head must be 'distance' or 'offset'", "training")
        if self.network_input not in ("interpolated", "lowres"):
            raise ValidationError("network_input must be 'interpolated' or 'lowres'", "training")

    def lr_at(self, epoch):
        """Learning rate used during (0-based) ``epoch``."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class TrainLog:
    epochs: List[dict] = field(default_factory=list)

    @property
    def losses(self):
        return [e["mean_loss"] for e in self.epochs]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "lr"])
        for e in self.epochs:
            writer.writerow([e["epoch"], repr(e["mean_loss"]), repr(e["lr"])])
        return out.getvalue()


def make_queries(cloud, sigma, rng) -> PointCloud:
    """Jitter every point with i.i.d. ``N(0, sigma^2)`` per coordinate."""
    pts = as_points(cloud)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0", "training")
    if sigma == 0:
        return PointCloud(pts)
    return PointCloud(pts + rng.normal(0.0, sigma, pts.shape))


def loss(predicted, targets) -> float:
    """Mean absolute error."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(p) != len(t):
        raise ValidationError(f"length mismatch: {len(p)} predictions vs {len(t)} targets", "training")
    if len(p) == 0:
        raise EmptyInputError("loss of an empty batch", "training")
    return float(np.abs(p - t).mean())


def random_rotation(rng):
    """Uniformly distributed rotation matrix from a random unit quaternion."""
    u1, u2, u3 = rng.uniform(0.0, 1.0, 3)
    a, b = math.sqrt(1 - u1), math.sqrt(u1)
    w, x, y, z = (a * math.sin(2 * math.pi * u2), a * math.cos(2 * math.pi * u2),
                  b * math.sin(2 * math.pi * u3), b * math.cos(2 * math.pi * u3))
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def augment(low, high, flags, rng):
    """Apply the same random rotation and scale to both patches; perturb only the low-res one."""
    lo, hi = as_points(low), as_points(high)
    if "rotate" in flags:
        rot = random_rotation(rng)
        lo, hi = lo @ rot.T, hi @ rot.T
    if "scale" in flags:
        s = rng.uniform(*SCALE_RANGE)
        lo, hi = lo * s, hi * s
    if "perturb" in flags:
        lo = lo + rng.normal(0.0, PERTURB_SIGMA, lo.shape)
    return PointCloud(lo), PointCloud(hi)


@dataclass
class AdamState:
    step: int = 0
    m: Optional[List[torch.Tensor]] = None
    v: Optional[List[torch.Tensor]] = None


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState, lr):
    """Bias-corrected Adam update, applied in place.  Returns the state."""
    if state.m is None:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1 - BETA1 ** state.step
    c2 = 1 - BETA2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ValidationError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}", "training")
            m.mul_(BETA1).add_(g, alpha=1 - BETA1)
            v.mul_(BETA2).addcmul_(g, g, value=1 - BETA2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))
    return state


def build_model(cfg: TrainConfig) -> P2PNet:
    return P2PNet(d=cfg.d, k=cfg.k, out_channels=1 if cfg.head == "distance" else 3,
                  regressor_input=cfg.regressor_input, seed=cfg.rng_seed)


def sample_loss(net, low, high, cfg: TrainConfig, rng):
    """Loss on one (P_L, P_G) patch pair with freshly jittered queries."""
    interp = midpoint_interpolate(low, InterpolationConfig(rate=cfg.rate, k_neighbors=cfg.interp_k))
    anchor = interp.points if cfg.network_input == "interpolated" else as_points(low)
    base = np.repeat(interp.points, cfg.queries_per_point, axis=0)
    queries = make_queries(base, cfg.jitter_sigma, rng).points
    oracle = ExactOracle(high)
    q = torch.tensor(queries, dtype=net.dtype)
    pred = net(q, anchor)
    if cfg.head == "distance":
        target = torch.from_numpy(oracle.values(queries)).to(net.dtype)
        return l1_loss(pred, target)
    idx, _ = oracle.index.nearest_batch(queries)
    target = torch.from_numpy(oracle.index.points[idx] - queries).to(net.dtype)
    return ((pred - target) ** 2).sum(dim=1).mean()


def train(dataset, cfg: TrainConfig = TrainConfig(), net: Optional[P2PNet] = None):
    """Train on a list of ``(P_L, P_G)`` patch pairs.

    Returns ``(net, TrainLog)``.  Given the same dataset, config and seed the
    result is bitwise reproducible on one platform.
    """
    if not dataset:
        raise EmptyInputError("training dataset is empty", "training")
    pairs = [(as_points(lo), as_points(hi)) for lo, hi in dataset]
    net = build_model(cfg) if net is None else net
    rng = np.random.default_rng(cfg.rng_seed)
    params = list(net.parameters())
    state = AdamState()
    history = TrainLog()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            net.zero_grad(set_to_none=True)
            losses = []
            for i in batch:
                low, high = pairs[i]
                if cfg.augment:
                    low, high = augment(low, high, cfg.augment, rng)
                losses.append(sample_loss(net, low, high, cfg, rng))
            batch_loss = torch.stack(losses).mean()
            if not torch.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}", "training")
            batch_loss.backward()
            adam_step(params, [p.grad for p in params], state, lr)
            total += batch_loss.item() * len(batch)
            count += len(batch)
        history.epochs.append({"epoch": epoch, "mean_loss": total / count, "lr": lr})
        log.debug("epoch %d loss %.6g lr %.3g", epoch, total / count, lr)
    return net, history


def load_dataset(root) -> List[Tuple[PointCloud, PointCloud]]:
    """Pair ``root/low/*.xyz`` with ``root/high/*.xyz`` by file name."""
    root = Path(root)
    lows = sorted((root / "low").glob("*.xyz"))
    if not lows:
        raise EmptyInputError(f"no low/*.xyz files under {root}", "training")
    pairs = []
    for lo in lows:
        hi = root / "high" / lo.name
        if not hi.exists():
            raise DataError(f"{lo.name} has no matching high-res file", "training")
        pairs.append((read_cloud(lo), read_cloud(hi)))
    return pairs
