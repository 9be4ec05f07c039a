"""Point cloud and triangle mesh containers, file I/O and normalization.

Coordinates are stored as read-only ``(N, 3)`` float64 arrays.  Supported
formats are whitespace separated XYZ, ASCII PLY (vertex element only) and
OFF meshes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    DegenerateInputError,
    EmptyInputError,
    ParseError,
    UpsampleError,
    ValidationError,
)

PathLike = Union[str, Path]

# 9 significant digits keeps the text files short while still round-tripping
# anything that was itself produced with this precision.
COORD_FMT = "%.9g"


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered list of 3D points with optional per-point feature rows."""

    points: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (N, 3), got {pts.shape}", "cloud")
        if len(pts) == 0:
            raise EmptyInputError("point cloud is empty", "cloud")
        if not np.isfinite(pts).all():
            raise ValidationError("point coordinates must be finite", "cloud")
        object.__setattr__(self, "points", _frozen(pts))
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or len(feats) != len(pts):
                raise ValidationError(
                    f"features must have one row per point, got {feats.shape} for {len(pts)} points",
                    "cloud",
                )
            object.__setattr__(self, "features", _frozen(feats))

    def __len__(self):
        return len(self.points)

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if self.features is None or other.features is None:
            return self.features is None and other.features is None
        return np.array_equal(self.features, other.features)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            bad = int(np.flatnonzero((faces < 0) | (faces >= len(verts)))[0] // 3)
            raise ValidationError(
                f"face {bad} references a vertex outside 0..{len(verts) - 1}", "cloud"
            )
        degenerate = (faces[:, 0] == faces[:, 1]) & (faces[:, 1] == faces[:, 2])
        if degenerate.any():
            raise ValidationError(f"face {int(np.flatnonzero(degenerate)[0])} is degenerate", "cloud")
        object.__setattr__(self, "vertices", _frozen(verts))
        faces = faces.copy()
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)

    @property
    def triangles(self):
        """``(F, 3, 3)`` array of triangle corner coordinates."""
        return self.vertices[self.faces]


@dataclass(frozen=True)
class NormalizeTransform:
    """Maps model coordinates to a unit sphere: ``(p - centroid) / scale``."""

    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"scale must be positive and finite, got {self.scale}", "cloud")
        object.__setattr__(self, "centroid", _frozen(np.asarray(self.centroid).reshape(3)))
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.centroid


def as_points(cloud) -> np.ndarray:
    """Return the ``(N, 3)`` coordinate array of a cloud or array-like."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim == 1 and pts.shape[0] == 3:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"expected an (N, 3) array, got shape {pts.shape}", "cloud")
    return pts


def normalize(cloud):
    """Center a cloud on its centroid and scale it into the unit sphere.

    Returns the normalized cloud together with the transform that produced it.
    Raises :class:`DegenerateInputError` when every point is identical.
    """
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyInputError("cannot normalize an empty cloud", "cloud")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    # hypot avoids underflow for tiny but distinct coordinates
    scale = float(np.hypot(np.hypot(d[:, 0], d[:, 1]), d[:, 2]).max())
    if scale == 0.0:
        raise DegenerateInputError("all points are identical; normalization scale would be 0", "cloud")
    t = NormalizeTransform(centroid, scale)
    return PointCloud(t.apply(pts)), t


def denormalize(cloud, t: NormalizeTransform) -> PointCloud:
    return PointCloud(t.invert(as_points(cloud)))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _infer_format(path: Path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("xyz", "ply", "off"):
        raise UpsampleError(f"unsupported format {fmt!r} for {path}", "cloud")
    return fmt


def _parse_coords(tokens, lineno):
    if len(tokens) < 3:
        raise ParseError(f"expected 3 coordinates, got {len(tokens)}", lineno)
    try:
        xyz = [float(t) for t in tokens[:3]]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not all(math.isfinite(v) for v in xyz):
        raise ParseError("non-finite coordinate", lineno)
    return xyz


def _read_xyz(lines):
    pts = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        pts.append(_parse_coords(tokens, lineno))
    return pts


def _read_ply(lines):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements = []  # (name, count, [property names])
    lineno = 1
    fmt_seen = False
    while True:
        if lineno >= len(lines):
            raise ParseError("header not terminated by end_header", lineno)
        tokens = lines[lineno].split()
        lineno += 1
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", lineno)
            fmt_seen = True
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", lineno)
            try:
                elements.append((tokens[1], int(tokens[2]), []))
            except ValueError:
                raise ParseError("element count is not an integer", lineno) from None
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {tokens[0]!r}", lineno)
    if not fmt_seen:
        raise ParseError("missing format line", lineno)

    pts = []
    for name, count, props in elements:
        if name != "vertex":
            lineno += count
            continue
        try:
            cols = [props.index(c) for c in ("x", "y", "z")]
        except ValueError:
            raise ParseError("vertex element lacks x/y/z properties", lineno) from None
        for _ in range(count):
            if lineno >= len(lines):
                raise ParseError("file ends before all vertices were read", lineno)
            tokens = lines[lineno].split()
            lineno += 1
            if len(tokens) < len(props):
                raise ParseError(f"expected {len(props)} values, got {len(tokens)}", lineno)
            pts.append(_parse_coords([tokens[c] for c in cols], lineno))
    return pts


def read_cloud(path: PathLike, format: Optional[str] = None) -> PointCloud:
    """Read an XYZ or ASCII PLY file into a :class:`PointCloud`.

    Point order is preserved.  Extra XYZ columns and extra PLY vertex
    properties are ignored.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    lines = path.read_text().splitlines()
    if fmt == "xyz":
        pts = _read_xyz(lines)
    elif fmt == "ply":
        pts = _read_ply(lines)
    else:
        raise UpsampleError("OFF files hold meshes; use read_mesh", "cloud")
    if not pts:
        raise EmptyInputError(f"{path} contains no points", "cloud")
    return PointCloud(np.array(pts, dtype=np.float64))


def format_cloud(cloud, format: str = "xyz", comments=()) -> str:
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyInputError("refusing to write an empty cloud", "cloud")
    body = "".join(f"{COORD_FMT} {COORD_FMT} {COORD_FMT}\n" % tuple(p) for p in pts.tolist())
    if format == "xyz":
        return body
    if format == "ply":
        header = ["ply", "format ascii 1.0"]
        header += [f"comment {c}" for c in comments]
        header += [
            f"element vertex {len(pts)}",
            "property double x",
            "property double y",
            "property double z",
            "end_header",
        ]
        return "\n".join(header) + "\n" + body
    raise UpsampleError(f"unsupported cloud format {format!r}", "cloud")


def write_cloud(cloud, path: PathLike, format: Optional[str] = None, comments=()) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    text = format_cloud(cloud, fmt, comments)
    with open(path, "w") as fh:
        fh.write(text)


def read_mesh(path: PathLike, format: str = "off") -> TriMesh:
    """Read an OFF mesh.  Polygons with more than three corners are fan triangulated."""
    path = Path(path)
    if format.lower() != "off":
        raise UpsampleError(f"unsupported mesh format {format!r}", "cloud")
    raw = path.read_text().splitlines()
    lines = []
    for lineno, line in enumerate(raw, start=1):
        content = line.split("#", 1)[0].split()
        if content:
            lines.append((lineno, content))
    if not lines:
        raise EmptyInputError(f"{path} is empty", "cloud")

    lineno, tokens = lines[0]
    if not tokens[0].endswith("OFF"):
        raise ParseError("missing OFF header", lineno)
    pos = 1
    counts = tokens[1:]
    if not counts:
        if len(lines) < 2:
            raise ParseError("missing counts line", lineno)
        lineno, counts = lines[1]
        pos = 2
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise ParseError("malformed counts line", lineno) from None

    if len(lines) < pos + nv + nf:
        raise ParseError("file ends before all vertices and faces were read", lines[-1][0])
    verts = [_parse_coords(tok, ln) for ln, tok in lines[pos : pos + nv]]
    faces = []
    for ln, tok in lines[pos + nv : pos + nv + nf]:
        try:
            n = int(tok[0])
            idx = [int(t) for t in tok[1 : 1 + n]]
        except ValueError:
            raise ParseError("face entries must be integers", ln) from None
        if n < 3 or len(idx) != n:
            raise ParseError(f"face declares {n} corners but lists {len(idx)}", ln)
        for i in idx:
            if i < 0 or i >= nv:
                raise ValidationError(
                    f"line {ln}: face index {i} out of range for {nv} vertices", "cloud"
                )
        faces.extend((idx[0], idx[j], idx[j + 1]) for j in range(1, n - 1))
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64))


def write_mesh(mesh: TriMesh, path: PathLike) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [f"{COORD_FMT} {COORD_FMT} {COORD_FMT}" % tuple(v) for v in mesh.vertices.tolist()]
    lines += ["3 %d %d %d" % tuple(f) for f in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
