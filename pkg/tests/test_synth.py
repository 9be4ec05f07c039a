import numpy as np
import pytest

from pcupsample.errors import ValidationError
from pcupsample.fields import mesh_distance_batch
from pcupsample.synth import (
    TORUS_MAJOR,
    TORUS_MINOR,
    box_mesh,
    patch_pair,
    sample_shape,
    shape_mesh,
    sphere_mesh,
    torus_mesh,
)


def torus_residual(p):
    ring = np.hypot(p[:, 0], p[:, 1]) - TORUS_MAJOR
    return np.abs(np.hypot(ring, p[:, 2]) - TORUS_MINOR)


class TestSamplers:
    def test_sphere_on_surface(self, rng):
        pts = sample_shape("sphere", 500, rng)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)

    def test_torus_on_surface(self, rng):
        assert torus_residual(sample_shape("torus", 500, rng)).max() < 1e-9

    def test_box_on_surface(self, rng):
        pts = sample_shape("box", 500, rng)
        np.testing.assert_allclose(np.abs(pts).max(axis=1), 1.0)

    def test_torus_area_weighting(self):
        # the outer half of the tube has more area than the inner half
        pts = sample_shape("torus", 20000, np.random.default_rng(0))
        outer = np.hypot(pts[:, 0], pts[:, 1]) > TORUS_MAJOR
        expected = 0.5 + TORUS_MINOR / (np.pi * TORUS_MAJOR)
        assert outer.mean() == pytest.approx(expected, abs=0.01)

    def test_seeded(self):
        a = sample_shape("torus", 50, np.random.default_rng(9))
        b = sample_shape("torus", 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_unknown_shape(self, rng):
        with pytest.raises(ValidationError):
            sample_shape("cone", 5, rng)

    def test_bad_count(self, rng):
        with pytest.raises(ValidationError):
            sample_shape("sphere", 0, rng)


class TestMeshes:
    def test_sphere_mesh_is_closed(self):
        m = sphere_mesh(2)
        edges = np.sort(np.concatenate([m.faces[:, [0, 1]], m.faces[:, [1, 2]], m.faces[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert (counts == 2).all()
        np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0, atol=1e-15)

    def test_samples_lie_near_meshes(self, rng):
        for shape, mesh, tol in (("sphere", sphere_mesh(), 0.01), ("torus", torus_mesh(), 0.01),
                                 ("box", box_mesh(), 1e-12)):
            d = mesh_distance_batch(mesh, sample_shape(shape, 200, rng))
            assert d.max() < tol, shape

    def test_line_has_none(self):
        assert shape_mesh("line") is None


class TestPatchPair:
    def test_shapes_and_frame(self, rng):
        low, high, t = patch_pair("sphere", rng, 64, 256)
        assert len(low) == 64 and len(high) == 256
        np.testing.assert_allclose(low.points.mean(axis=0), 0, atol=1e-12)
        assert np.linalg.norm(low.points, axis=1).max() == pytest.approx(1.0)
        # the high-res patch lives on the same transformed sphere
        back = high.points * t.scale + t.centroid
        np.testing.assert_allclose(np.linalg.norm(back, axis=1), 1.0, atol=1e-12)
