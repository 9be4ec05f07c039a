import numpy as np
import pytest

from pcupsample.errors import NumericError, ValidationError
from pcupsample.fields import ExactOracle
from pcupsample.metrics import chamfer
from pcupsample.refine import RefineConfig, refine, refine_offset, refine_projection, run


class ConstantField:
    def __init__(self, value, grad):
        self.value_, self.grad = value, np.asarray(grad, dtype=np.float64)

    def evaluate(self, pts):
        pts = np.asarray(pts)
        return np.full(len(pts), self.value_), np.tile(self.grad, (len(pts), 1))


class TestGradientDescent:
    def test_closed_form(self):
        out, trace = refine([[1.0, 0, 0]], ExactOracle([[0, 0, 0]]), RefineConfig(step=0.1, iterations=3))
        np.testing.assert_allclose(out.points, [[0.7, 0, 0]], atol=1e-12)
        np.testing.assert_allclose(trace.mean_distance, [1.0, 0.9, 0.8, 0.7], atol=1e-12)

    def test_exact_landing(self):
        out, trace = refine([[0, 0.3, 0.4]], ExactOracle([[0, 0, 0]]), RefineConfig(step=0.5, iterations=1))
        np.testing.assert_allclose(out.points, [[0, 0, 0]], atol=1e-15)
        assert trace.mean_distance[-1] == pytest.approx(0, abs=1e-15)

    def test_jittered_gt(self, rng):
        gt = rng.normal(size=(200, 3))
        gt /= np.linalg.norm(gt, axis=1, keepdims=True)
        start = gt + rng.normal(0, 0.02, gt.shape)
        out, trace = refine(start, ExactOracle(gt), RefineConfig(step=0.005, iterations=10), gt=gt)
        assert chamfer(out, gt) < chamfer(start, gt)
        assert all(b < a for a, b in zip(trace.mean_distance, trace.mean_distance[1:]))
        assert len(trace.cd_to_gt) == 11

    def test_count_and_order(self, rng):
        start = rng.normal(size=(30, 3))
        out, _ = refine(start, ConstantField(1.0, [1, 0, 0]), RefineConfig(step=0.5, iterations=2))
        np.testing.assert_allclose(out.points, start - [1.0, 0, 0], atol=1e-15)

    def test_zero_iterations(self, rng):
        start = rng.normal(size=(5, 3))
        out, trace = refine(start, ExactOracle(rng.normal(size=(5, 3))), RefineConfig(iterations=0))
        np.testing.assert_array_equal(out.points, start)
        assert len(trace.mean_distance) == 1

    def test_non_finite(self):
        with pytest.raises(NumericError, match="iteration 0, point 0"):
            refine([[0.0, 0, 0]], ConstantField(1.0, [np.inf, 0, 0]), RefineConfig())

    def test_warning_on_rising_distance(self):
        class Rising:
            calls = 0

            def evaluate(self, pts):
                Rising.calls += 1
                return np.full(len(pts), float(Rising.calls)), np.zeros((len(pts), 3))

        _, trace = refine([[0.0, 0, 0]], Rising(), RefineConfig(iterations=4))
        assert trace.warnings

    def test_trace_csv(self):
        _, trace = refine([[1.0, 0, 0]], ExactOracle([[0, 0, 0]]), RefineConfig(step=0.1, iterations=2),
                          gt=[[0, 0, 0]])
        lines = trace.to_csv().splitlines()
        assert lines[0] == "iteration,mean_predicted_distance,cd_to_gt"
        assert len(lines) == 4


class TestConfig:
    def test_unknown_strategy(self):
        with pytest.raises(ValidationError, match="grad-descent"):
            RefineConfig(strategy="newton")

    @pytest.mark.parametrize("kw", [{"step": 0}, {"step": -1}, {"iterations": -1}])
    def test_bad_values(self, kw):
        with pytest.raises(ValidationError):
            RefineConfig(**kw)


class TestOffset:
    def test_zero_model(self, rng):
        start = rng.normal(size=(10, 3))
        out, _ = refine_offset(start, lambda p: np.zeros_like(p), RefineConfig("auto-offset", 0.5, 5))
        np.testing.assert_array_equal(out.points, start)

    def test_constant_model(self, rng):
        start = rng.normal(size=(10, 3))
        out, _ = refine_offset(start, lambda p: np.tile([1.0, 0, 0], (len(p), 1)), RefineConfig("auto-offset", 0.5, 2))
        np.testing.assert_allclose(out.points, start + [1.0, 0, 0], atol=1e-15)


class TestProjection:
    def test_lands_on_nearest(self, rng):
        gt = rng.normal(size=(50, 3))
        start = rng.normal(size=(20, 3))
        oracle = ExactOracle(gt)
        out, _ = refine_projection(start, oracle, RefineConfig("normalized-projection", 1.0, 1))
        idx, _ = oracle.index.nearest_batch(start)
        np.testing.assert_allclose(out.points, gt[idx], atol=1e-12)

    def test_zero_distance_unchanged(self, rng):
        gt = rng.normal(size=(5, 3))
        out, _ = refine_projection(gt, ExactOracle(gt), RefineConfig("normalized-projection", 1.0, 3))
        np.testing.assert_array_equal(out.points, gt)


def test_run_dispatch(rng):
    gt = rng.normal(size=(5, 3))
    start = gt + 0.1
    a, _ = run(start, ExactOracle(gt), RefineConfig("normalized-projection", 1.0, 1))
    b, _ = refine_projection(start, ExactOracle(gt), RefineConfig("normalized-projection", 1.0, 1))
    np.testing.assert_array_equal(a.points, b.points)
    with pytest.raises(ValidationError):
        refine(start, ExactOracle(gt), RefineConfig("normalized-projection"))
