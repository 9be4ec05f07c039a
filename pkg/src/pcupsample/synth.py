"""Analytic surface samplers and matching meshes used as synthetic fixtures."""

from __future__ import annotations

import numpy as np

from .cloud import NormalizeTransform, PointCloud, TriMesh, normalize
from .errors import ValidationError
from .spatial import SpatialIndex

SHAPES = ("sphere", "torus", "box", "line")
TORUS_MAJOR = 1.0
TORUS_MINOR = 0.3


def sample_sphere(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_torus(n, rng, major=TORUS_MAJOR, minor=TORUS_MINOR):
    # area element is proportional to (major + minor*cos v): rejection sample v
    vs = np.empty(0)
    while len(vs) < n:
        v = rng.uniform(0.0, 2 * np.pi, 2 * n)
        accept = rng.uniform(0.0, major + minor, 2 * n) < major + minor * np.cos(v)
        vs = np.concatenate([vs, v[accept]])
    v = vs[:n]
    u = rng.uniform(0.0, 2 * np.pi, n)
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


def sample_box(n, rng):
    """Uniform samples on the surface of the cube [-1, 1]^3."""
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-1.0, 1.0, (n, 2))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts = np.empty((n, 3))
    for ax in range(3):
        rows = axis == ax
        others = [o for o in range(3) if o != ax]
        pts[rows, ax] = sign[rows]
        pts[rows, others[0]] = uv[rows, 0]
        pts[rows, others[1]] = uv[rows, 1]
    return pts


def sample_line(n, rng):
    t = rng.uniform(-1.0, 1.0, n)
    return np.stack([t, np.zeros(n), np.zeros(n)], axis=1)


def sample_shape(shape, n, rng):
    samplers = {"sphere": sample_sphere, "torus": sample_torus, "box": sample_box, "line": sample_line}
    if shape not in samplers:
        raise ValidationError(f"unknown shape {shape!r}; choose from {', '.join(SHAPES)}", "synth")
    if n < 1:
        raise ValidationError("sample count must be positive", "synth")
    return samplers[shape](int(n), rng)


def sphere_mesh(subdivisions=3):
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts), np.array(faces))


def torus_mesh(nu=64, nv=32, major=TORUS_MAJOR, minor=TORUS_MINOR):
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    v = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(faces))


def box_mesh():
    verts = np.array([[x, y, z] for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [(q[0], q[i], q[i + 1]) for q in quads for i in (1, 2)]
    return TriMesh(verts, np.array(faces))


def shape_mesh(shape):
    """Reference mesh for ``shape``, or ``None`` when the shape has no surface."""
    return {"sphere": sphere_mesh, "torus": torus_mesh, "box": box_mesh}.get(shape, lambda: None)()


def transform_mesh(mesh: TriMesh, t: NormalizeTransform) -> TriMesh:
    return TriMesh(t.apply(mesh.vertices), mesh.faces)


def patch_pair(shape, rng, n_low=256, n_high=1024, low_total=2048):
    """A matching low-res / high-res patch around a random surface location.

    Both patches come from independent samplings of the surface, the high-res
    one ``n_high / n_low`` times denser, and are normalized by the transform
    of the low-res patch.  Returns ``(P_L, P_G, transform)``.
    """
    ratio = n_high / n_low
    low = sample_shape(shape, low_total, rng)
    high = sample_shape(shape, int(round(low_total * ratio)), rng)
    center = low[rng.integers(0, len(low))]
    li, _ = SpatialIndex(low).query(center[None, :], n_low)
    hi, _ = SpatialIndex(high).query(center[None, :], n_high)
    p_low, t = normalize(low[li[0]])
    p_high = PointCloud(t.apply(high[hi[0]]))
    return p_low, p_high, t
