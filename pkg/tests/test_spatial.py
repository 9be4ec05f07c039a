import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_dist, brute_knn
from pcupsample.errors import EmptyInputError, ValidationError
from pcupsample.spatial import SpatialIndex, build, pairwise_distance


class TestBuild:
    def test_single_point(self):
        idx = build([[1.0, 2.0, 3.0]])
        assert idx.nearest([5.0, 5.0, 5.0])[0] == 0
        assert idx.knn([0.0, 0.0, 0.0], 1)[0][0] == 0

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            SpatialIndex(np.zeros((0, 3)))

    def test_2048_against_brute_force(self, rng):
        src = rng.normal(size=(2048, 3))
        probes = rng.normal(size=(100, 3))
        idx, dist = build(src).query(probes, 8)
        want_idx, want_dist = brute_knn(src, probes, 8)
        np.testing.assert_array_equal(idx, want_idx)
        np.testing.assert_array_equal(dist, want_dist)

    def test_snapshot_is_immutable(self, rng):
        src = rng.normal(size=(10, 3))
        index = SpatialIndex(src)
        src[:] = 0
        assert not np.all(index.points == 0)


class TestKnn:
    def test_axis_example(self):
        index = SpatialIndex([[0, 0, 0], [1, 0, 0], [3, 0, 0]])
        assert index.knn([0, 0, 0], 2, exclude_self=True) == [(1, 1.0), (2, 3.0)]

    def test_tie_lower_index_first(self):
        index = SpatialIndex([[2, 0, 0], [-1, 0, 0], [1, 0, 0]])
        assert [i for i, _ in index.knn([0, 0, 0], 2)] == [1, 2]

    def test_tie_on_lattice(self):
        g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
        rng = np.random.default_rng(5)
        perm = rng.permutation(len(g))
        src = g[perm]
        q = np.array([[1.5, 1.5, 1.5], [1.0, 1.0, 1.0], [0.5, 0.0, 0.0]])
        idx, dist = SpatialIndex(src).query(q, 9)
        want_idx, want_dist = brute_knn(src, q, 9)
        np.testing.assert_array_equal(idx, want_idx)
        np.testing.assert_array_equal(dist, want_dist)

    def test_500_points_k16(self, rng):
        src = rng.uniform(-1, 1, size=(500, 3))
        q = rng.uniform(-1, 1, size=(50, 3))
        idx, dist = SpatialIndex(src).query(q, 16)
        want_idx, want_dist = brute_knn(src, q, 16)
        np.testing.assert_array_equal(idx, want_idx)
        np.testing.assert_array_equal(dist, want_dist)

    def test_self_knn_excludes_own_index(self, rng):
        src = rng.normal(size=(60, 3))
        idx, dist = SpatialIndex(src).self_knn(5)
        assert not (idx == np.arange(60)[:, None]).any()
        d = brute_dist(src, src)
        np.fill_diagonal(d, np.inf)
        order = np.argsort(d, axis=1, kind="stable")[:, :5]
        np.testing.assert_array_equal(idx, order)

    def test_self_knn_keeps_duplicates(self):
        src = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
        idx, dist = SpatialIndex(src).self_knn(1)
        np.testing.assert_array_equal(idx[:, 0], [1, 0, 0])
        np.testing.assert_array_equal(dist[:, 0], [0, 0, 1])

    def test_k_too_large(self):
        with pytest.raises(ValidationError, match="k=4"):
            SpatialIndex(np.eye(3)).query(np.zeros((1, 3)), 4)

    def test_k_zero(self):
        with pytest.raises(ValidationError):
            SpatialIndex(np.eye(3)).query(np.zeros((1, 3)), 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 20), st.booleans())
    def test_matches_brute_force_property(self, seed, k, quantize):
        r = np.random.default_rng(seed)
        src = r.uniform(-1, 1, size=(int(r.integers(k, 80)), 3))
        q = r.uniform(-1, 1, size=(10, 3))
        if quantize:
            # coarse grid creates many exact ties
            src, q = np.round(src * 2) / 2, np.round(q * 2) / 2
        idx, dist = SpatialIndex(src).query(q, k)
        want_idx, want_dist = brute_knn(src, q, k)
        np.testing.assert_array_equal(idx, want_idx)
        np.testing.assert_array_equal(dist, want_dist)


class TestNearest:
    def test_example(self):
        i, d = SpatialIndex([[0, 0, 0], [1, 0, 0]]).nearest([0.4, 0, 0])
        assert i == 0
        assert d == pytest.approx(0.4, abs=1e-15)

    def test_coincident(self):
        assert SpatialIndex([[0, 0, 0], [1, 2, 3]]).nearest([1, 2, 3]) == (1, 0.0)

    def test_stress(self, rng):
        src = rng.normal(size=(1000, 3))
        q = rng.normal(size=(300, 3))
        i, d = SpatialIndex(src).nearest_batch(q)
        bd = brute_dist(q, src)
        np.testing.assert_array_equal(i, bd.argmin(axis=1))
        np.testing.assert_array_equal(d, bd.min(axis=1))


def test_pairwise_distance_broadcasts():
    a = np.array([[3.0, 4.0, 0.0]])
    np.testing.assert_array_equal(pairwise_distance(a, np.zeros(3)), [5.0])
