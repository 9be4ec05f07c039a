"""Ablation studies on a small synthetic fixture.

Every study trains its variants on the same patches with the same seed and
reports mean CD/HD/P2F over held-out test patches.  Step size and iteration
count are picked per variant on separate validation patches so that no
variant is judged at a step size tuned for another.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .cloud import TriMesh
from .errors import ValidationError
from .metrics import chamfer, hausdorff, p2f
from .p2pnet import LearnedField, LearnedOffsets, P2PNet
from .refine import RefineConfig, run
from .sampling import InterpolationConfig, midpoint_interpolate
from .synth import patch_pair, shape_mesh, transform_mesh
from .training import TrainConfig, train

log = logging.getLogger(__name__)

STUDIES = ("prediction-content", "network-input", "refine-strategy", "regressor-input", "train-noise")

GD_STEPS = (0.005, 0.01, 0.02)
GD_ITERS = (10,)
OFFSET_STEPS = (0.1, 0.25, 0.5)
OFFSET_ITERS = (2, 5, 10)
PROJECTION_ITERS = (1, 2, 3, 5, 10)
# mesh faces farther than this from the patch center cannot be nearest to a refined point
MESH_CROP_RADIUS = 1.5


@dataclass(frozen=True)
class Variant:
    name: str
    model: str
    strategy: str = "grad-descent"
    fixed: Tuple[float, int] = ()


# model name -> TrainConfig overrides
MODELS = {
    "full": {},
    "offset": {"head": "offset"},
    "no-jitter": {"jitter_sigma": 0.0},
    "local": {"regressor_input": "local"},
    "global": {"regressor_input": "global"},
    "lowres-input": {"network_input": "lowres"},
}

VARIANTS = {
    "prediction-content": [
        Variant("distance", "full"),
        Variant("offset-auto-regressive", "offset", "auto-offset"),
        Variant("offset-end-to-end", "offset", "auto-offset", (1.0, 1)),
    ],
    "network-input": [
        Variant("interpolated", "full"),
        Variant("low-res", "lowres-input"),
    ],
    "refine-strategy": [
        Variant("gradient-descent", "full"),
        Variant("normalized-projection", "full", "normalized-projection"),
    ],
    "regressor-input": [
        Variant("local+global", "full"),
        Variant("local", "local"),
        Variant("global", "global"),
    ],
    "train-noise": [
        Variant("with-jitter", "full"),
        Variant("without-jitter", "no-jitter"),
    ],
}


@dataclass
class AblationFixture:
    """Patches, training budget and a cache of trained models shared by all studies."""

    shape: str = "torus"
    seed: int = 0
    train_patches: int = 8
    test_patches: int = 4
    val_patches: int = 2
    epochs: int = 20
    batch_size: int = 1
    # 1e-3 drives the softplus head into saturation on so few patches
    lr: float = 3e-4
    n_low: int = 256
    n_high: int = 1024
    _data: Dict[str, list] = field(default=None, init=False, repr=False)
    _models: Dict[str, P2PNet] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for name in ("train_patches", "test_patches", "val_patches", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1", "ablation")

    def describe(self):
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}

    def train_config(self, model) -> TrainConfig:
        return replace(TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                                   rng_seed=self.seed),
                       **MODELS[model])

    @property
    def data(self):
        if self._data is None:
            rng = np.random.default_rng(self.seed)
            mesh = shape_mesh(self.shape)
            splits = {}
            for split in ("train", "val", "test"):
                count = getattr(self, f"{split}_patches")
                items = []
                for _ in range(count):
                    low, high, t = patch_pair(self.shape, rng, self.n_low, self.n_high)
                    local_mesh = None if mesh is None else _crop(transform_mesh(mesh, t))
                    items.append((low, high, local_mesh))
                splits[split] = items
            self._data = splits
        return self._data

    def model(self, name) -> P2PNet:
        if name not in self._models:
            log.info("training ablation model %r", name)
            pairs = [(lo, hi) for lo, hi, _ in self.data["train"]]
            self._models[name], _ = train(pairs, self.train_config(name))
        return self._models[name]


def _crop(mesh: TriMesh) -> TriMesh:
    near = np.linalg.norm(mesh.vertices, axis=1) <= MESH_CROP_RADIUS
    keep = near[mesh.faces].any(axis=1)
    return TriMesh(mesh.vertices, mesh.faces[keep])


def _refine_patch(net, cfg: TrainConfig, rcfg: RefineConfig, low, interp):
    anchor = interp if cfg.network_input == "interpolated" else low
    if rcfg.strategy == "auto-offset":
        model = LearnedOffsets(net, anchor.points)
    else:
        model = LearnedField(net, anchor.points)
    out, _ = run(interp, model, rcfg)
    return out


def _candidates(variant: Variant):
    if variant.fixed:
        step, iters = variant.fixed
        return [RefineConfig(variant.strategy, step, iters)]
    if variant.strategy == "grad-descent":
        grid = itertools.product(GD_STEPS, GD_ITERS)
    elif variant.strategy == "auto-offset":
        grid = itertools.product(OFFSET_STEPS, OFFSET_ITERS)
    else:
        grid = ((1.0, t) for t in PROJECTION_ITERS)
    return [RefineConfig(variant.strategy, s, t) for s, t in grid]


def _interp(low):
    return midpoint_interpolate(low, InterpolationConfig(rate=4.0))


@dataclass
class AblationRow:
    variant: str
    cd: float
    hd: float
    p2f: float
    step: float
    iterations: int


@dataclass
class AblationTable:
    study: str
    rows: List[AblationRow]
    interpolated_cd: float

    def row(self, name) -> AblationRow:
        for r in self.rows:
            if r.variant == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# study={self.study} interpolated_cd_e3={self.interpolated_cd * 1e3:.6f}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["variant", "cd_e3", "hd_e3", "p2f_e3", "step", "iters"])
        for r in self.rows:
            p = "" if np.isnan(r.p2f) else f"{r.p2f * 1e3:.6f}"
            writer.writerow([r.variant, f"{r.cd * 1e3:.6f}", f"{r.hd * 1e3:.6f}", p, r.step, r.iterations])
        return out.getvalue()


def evaluate_variant(fixture: AblationFixture, variant: Variant) -> AblationRow:
    net = fixture.model(variant.model)
    cfg = fixture.train_config(variant.model)
    data = fixture.data

    def mean_cd(rcfg, split):
        return float(np.mean([chamfer(_refine_patch(net, cfg, rcfg, lo, _interp(lo)), hi)
                              for lo, hi, _ in data[split]]))

    candidates = _candidates(variant)
    if len(candidates) > 1:
        best = min(candidates, key=lambda c: mean_cd(c, "val"))
    else:
        best = candidates[0]
    cds, hds, p2fs = [], [], []
    for lo, hi, mesh in data["test"]:
        out = _refine_patch(net, cfg, best, lo, _interp(lo))
        cds.append(chamfer(out, hi))
        hds.append(hausdorff(out, hi))
        p2fs.append(np.nan if mesh is None else p2f(out, mesh))
    return AblationRow(variant.name, float(np.mean(cds)), float(np.mean(hds)), float(np.mean(p2fs)),
                       best.step, best.iterations)


def run_study(study: str, fixture: AblationFixture) -> AblationTable:
    if study not in STUDIES:
        raise ValidationError(f"unknown study {study!r}; valid studies: {', '.join(STUDIES)}", "ablation")
    rows = [evaluate_variant(fixture, v) for v in VARIANTS[study]]
    base = float(np.mean([chamfer(_interp(lo), hi) for lo, hi, _ in fixture.data["test"]]))
    return AblationTable(study, rows, base)
