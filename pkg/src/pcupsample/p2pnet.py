"""Learned point-to-point distance network.

Feature extractor: an initial MLP followed by three dense blocks.  Each block
holds three convolution groups (channel-reducing MLP + point convolution)
wired with dense concatenation, and a transition MLP back to width ``d``.
The distance regressor interpolates the four local feature scales at a query
location from its three nearest anchor points, appends the max-pooled global
feature and the query coordinates, and maps them through a four-layer MLP.

Everything runs in torch float64 by default so gradients with respect to the
query coordinates and to the parameters come from autograd.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .cloud import as_points
from .errors import ChecksumError, ShapeMismatchError, ValidationError
from .fields import FieldMixin
from .spatial import SpatialIndex

REGRESSOR_INPUTS = ("both", "local", "global")

CKPT_MAGIC = b"P2PNCKPT"
CKPT_VERSION = 1


def mlp(widths, final_activation=False):
    """Linear layers with ReLU between them (and optionally after the last)."""
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(widths) - 2 or final_activation:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class PointConvKernel(nn.Module):
    """The three transforms of one point convolution.

    ``alpha`` maps a neighbor offset to a kernel, ``beta`` transforms neighbor
    features, ``gamma`` mixes their elementwise product.
    """

    def __init__(self, d, in_width=None):
        super().__init__()
        in_width = d if in_width is None else in_width
        self.alpha = mlp([3, d, d])
        self.beta = mlp([in_width, d, d])
        self.gamma = mlp([d, d, d])

    def forward(self, points, feats, neighbors):
        return p3dconv(points, feats, self.alpha, self.beta, self.gamma, neighbors=neighbors)


def p3dconv(points, feats, alpha, beta, gamma, k=None, neighbors=None):
    """Point convolution: ``f'_p = sum_{q in kNN(p)} gamma(alpha(q - p) * beta(f_q))``.

    ``neighbors`` is an ``(N, k)`` index tensor; when omitted it is computed
    from ``points`` with ``k`` neighbors, excluding each point itself.
    """
    points = torch.as_tensor(points)
    if feats.shape[0] != points.shape[0]:
        raise ValidationError(
            f"feature rows ({feats.shape[0]}) do not match point count ({points.shape[0]})", "p2pnet"
        )
    if neighbors is None:
        if k is None or k >= len(points):
            raise ValidationError(f"k={k} must be smaller than the point count {len(points)}", "p2pnet")
        idx, _ = SpatialIndex(points.detach().cpu().numpy()).self_knn(k)
        neighbors = torch.from_numpy(idx)
    offsets = points[neighbors] - points[:, None, :]
    kernel = alpha(offsets)
    transformed = beta(feats)[neighbors]
    return gamma(kernel * transformed).sum(dim=1)


class DenseBlock(nn.Module):
    def __init__(self, d, groups=3):
        super().__init__()
        self.reduce = nn.ModuleList(mlp([d * (j + 1), d], final_activation=True) for j in range(groups))
        self.convs = nn.ModuleList(PointConvKernel(d) for _ in range(groups))
        self.transition = mlp([d * (groups + 1), d], final_activation=True)

    def forward(self, points, x, neighbors):
        stack = [x]
        for reduce, conv in zip(self.reduce, self.convs):
            h = reduce(torch.cat(stack, dim=1))
            stack.append(conv(points, h, neighbors))
        return self.transition(torch.cat(stack, dim=1))


@dataclass
class ExtractedFeatures:
    """Per-anchor local features at four scales plus the pooled global feature."""

    locals: List[torch.Tensor]
    glob: torch.Tensor
    anchor: np.ndarray
    index: SpatialIndex

    def detach(self):
        return ExtractedFeatures([l.detach() for l in self.locals], self.glob.detach(), self.anchor, self.index)


class P2PNet(nn.Module):
    """Feature extractor plus regressor.

    Args:
        d: feature width shared by every MLP.
        k: neighborhood size of the point convolutions.
        out_channels: 1 for the distance head, 3 for the offset baseline.
        regressor_input: ``"both"``, ``"local"`` or ``"global"`` feature sets.
        seed: seed for parameter initialization.
    """

    def __init__(self, d=32, k=16, out_channels=1, regressor_input="both", seed=0,
                 dtype=torch.float64):
        super().__init__()
        if regressor_input not in REGRESSOR_INPUTS:
            raise ValidationError(f"regressor_input must be one of {REGRESSOR_INPUTS}", "p2pnet")
        self.d, self.k = int(d), int(k)
        self.out_channels = int(out_channels)
        self.regressor_input = regressor_input
        self.initial = mlp([3, d], final_activation=True)
        self.blocks = nn.ModuleList(DenseBlock(d) for _ in range(3))
        width = 3
        if regressor_input in ("both", "local"):
            width += 4 * d
        if regressor_input in ("both", "global"):
            width += d
        self.regressor = mlp([width, d, d, d, out_channels])
        self.to(dtype)
        self.reset_parameters(seed)

    @property
    def dtype(self):
        return self.initial[0].weight.dtype

    def config(self):
        return {"d": self.d, "k": self.k, "out_channels": self.out_channels,
                "regressor_input": self.regressor_input}

    def reset_parameters(self, seed=0):
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / module.in_features ** 0.5
                    w = torch.rand(module.weight.shape, generator=gen, dtype=torch.float64)
                    module.weight.copy_((2 * w - 1) * bound)
                    module.bias.zero_()

    def extract(self, anchor) -> ExtractedFeatures:
        pts = np.ascontiguousarray(as_points(anchor))
        if len(pts) <= self.k:
            raise ValidationError(
                f"feature extraction needs more than k={self.k} points, got {len(pts)}", "p2pnet"
            )
        index = SpatialIndex(pts)
        neighbors = torch.from_numpy(index.self_knn(self.k)[0])
        p = torch.tensor(pts, dtype=self.dtype)
        x = self.initial(p)
        locals_ = [x]
        for block in self.blocks:
            x = block(p, x, neighbors)
            locals_.append(x)
        glob = x.max(dim=0, keepdim=True).values
        return ExtractedFeatures(locals_, glob, pts, index)

    def regress(self, queries, feats: ExtractedFeatures, interp_at=None):
        """Raw regressor output for ``(M, 3)`` query tensor(s).

        ``interp_at`` optionally fixes the positions at which local features
        are interpolated; by default they follow ``queries``.
        """
        q = torch.as_tensor(queries, dtype=self.dtype)
        parts = [q]
        if self.regressor_input in ("both", "local"):
            where = q if interp_at is None else torch.as_tensor(interp_at, dtype=self.dtype)
            parts += interpolate_features(where, feats)
        if self.regressor_input in ("both", "global"):
            parts.append(feats.glob.expand(len(q), -1))
        out = self.regressor(torch.cat(parts, dim=1))
        if self.out_channels == 1:
            return F.softplus(out[:, 0])
        return out

    def forward(self, queries, anchor):
        return self.regress(queries, self.extract(anchor))


def interpolate_features(queries, feats: ExtractedFeatures):
    """Inverse-distance weighted features from the three nearest anchors.

    A query that coincides exactly with an anchor takes that anchor's
    features unchanged.  Neighbor selection is piecewise constant; the
    weights stay differentiable in the query position.
    """
    q = torch.as_tensor(queries)
    if len(feats.anchor) < 3:
        raise ValidationError("feature interpolation needs at least 3 anchor points", "p2pnet")
    idx_np, _ = feats.index.query(q.detach().cpu().numpy(), 3)
    idx = torch.from_numpy(idx_np)
    anchor = torch.tensor(feats.anchor, dtype=q.dtype)
    diff = q[:, None, :] - anchor[idx]
    coincident = (diff == 0).all(dim=-1)
    sq = (diff * diff).sum(dim=-1)
    inv = 1.0 / torch.sqrt(torch.where(coincident, torch.ones_like(sq), sq))
    hit = coincident.any(dim=1, keepdim=True)
    first = coincident & (coincident.cumsum(dim=1) == 1)
    w = torch.where(hit, first.to(q.dtype), inv)
    w = w / w.sum(dim=1, keepdim=True)
    return [(l[idx] * w[..., None]).sum(dim=1) for l in feats.locals]


class LearnedField(FieldMixin):
    """Distance field backed by a trained network over a fixed anchor cloud."""

    def __init__(self, net: P2PNet, anchor):
        self.net = net
        with torch.no_grad():
            self.feats = net.extract(anchor).detach()

    def evaluate(self, points, interp_at=None):
        pts = as_points(points)
        q = torch.tensor(pts, dtype=self.net.dtype, requires_grad=True)
        values = self.net.regress(q, self.feats, interp_at=interp_at)
        (grad,) = torch.autograd.grad(values.sum(), q)
        return values.detach().numpy().astype(np.float64), grad.numpy().astype(np.float64)


class LearnedOffsets:
    """Displacement predictor for the offset-regression baseline."""

    def __init__(self, net: P2PNet, anchor):
        if net.out_channels != 3:
            raise ValidationError("offset model needs a 3-channel regressor", "p2pnet")
        self.net = net
        with torch.no_grad():
            self.feats = net.extract(anchor).detach()

    def __call__(self, points):
        with torch.no_grad():
            out = self.net.regress(torch.tensor(as_points(points), dtype=self.net.dtype), self.feats)
        return out.numpy().astype(np.float64)


def grad_query(net: P2PNet, queries, feats: ExtractedFeatures):
    """Gradient of the predicted distance with respect to each query point."""
    q = torch.tensor(as_points(queries), dtype=net.dtype, requires_grad=True)
    (g,) = torch.autograd.grad(net.regress(q, feats).sum(), q)
    return g.numpy()


def l1_loss(pred, target):
    return (pred - target).abs().mean()


def grad_params(net: P2PNet, anchor, queries, targets):
    """Mean absolute error of the distance head and its parameter gradients.

    Features are re-extracted inside the graph so the gradients cover the
    whole network.  Returns ``(loss, {name: gradient array})``.
    """
    net.zero_grad(set_to_none=True)
    pred = net(torch.tensor(as_points(queries), dtype=net.dtype), anchor)
    loss = l1_loss(pred, torch.as_tensor(np.asarray(targets), dtype=net.dtype))
    loss.backward()
    grads = {}
    for name, p in net.named_parameters():
        grads[name] = np.zeros(p.shape) if p.grad is None else p.grad.detach().numpy().copy()
    return loss.item(), grads


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_params(net: P2PNet, path) -> None:
    """Write a versioned, checksummed checkpoint with float64 tensors."""
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<III", CKPT_VERSION, net.d, net.k))
    meta = json.dumps(net.config(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    state = net.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        encoded = name.encode()
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    Path(path).write_bytes(payload + hashlib.sha256(payload).digest())


def _read_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < len(CKPT_MAGIC) + 32:
        raise ChecksumError(f"{path}: file too short to be a checkpoint", "p2pnet")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated checkpoint)", "p2pnet")
    if not payload.startswith(CKPT_MAGIC):
        raise ChecksumError(f"{path}: bad magic bytes", "p2pnet")
    pos = len(CKPT_MAGIC)
    version, d, k = struct.unpack_from("<III", payload, pos)
    pos += 12
    if version != CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}", "p2pnet")
    (n,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    meta = json.loads(payload[pos : pos + n])
    pos += n
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        name = payload[pos : pos + n].decode()
        pos += n
        (ndim,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    meta.update(d=d, k=k)
    return meta, tensors


def load_params(path, net: Optional[P2PNet] = None) -> P2PNet:
    """Load a checkpoint, into ``net`` if given (shapes must match)."""
    meta, tensors = _read_checkpoint(path)
    if net is None:
        net = P2PNet(**meta)
    state = net.state_dict()
    missing = [name for name in state if name not in tensors]
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks tensor {missing[0]}", "p2pnet")
    for name, ref in state.items():
        if tuple(ref.shape) != tensors[name].shape:
            raise ShapeMismatchError(
                f"layer {name}: checkpoint shape {tensors[name].shape} != model shape {tuple(ref.shape)}",
                "p2pnet",
            )
    net.load_state_dict({name: torch.from_numpy(tensors[name]).to(net.dtype) for name in state})
    return net
