import numpy as np
import pytest

from pcupsample.metrics import chamfer
from pcupsample.p2pnet import P2PNet
from pcupsample.pipeline import upsample, upsample_oracle
from pcupsample.refine import RefineConfig
from pcupsample.sampling import InterpolationConfig, PatchConfig, midpoint_interpolate
from pcupsample.spatial import SpatialIndex
from pcupsample.synth import sample_sphere


@pytest.fixture(scope="module")
def sphere():
    rng = np.random.default_rng(3)
    return sample_sphere(300, rng), sample_sphere(3000, rng)


class TestUpsample:
    def test_zero_iterations_is_interpolation(self, sphere):
        low, _ = sphere
        res = upsample(low, P2PNet(d=4, k=8), InterpolationConfig(rate=2.0), RefineConfig(iterations=0))
        np.testing.assert_array_equal(res.output.points, midpoint_interpolate(low, InterpolationConfig(rate=2.0)).points)

    @pytest.mark.parametrize("rate", [1.0, 2.5, 4.0])
    def test_cardinality(self, sphere, rate):
        low, _ = sphere
        res = upsample(low, P2PNet(d=4, k=8), InterpolationConfig(rate=rate), RefineConfig(iterations=1),
                       PatchConfig(patch_size=64))
        assert len(res.output) == int(np.floor(rate * 300 + 0.5))
        assert len(res.traces) >= 1

    def test_untrained_net_moves_points_little(self, sphere):
        low, _ = sphere
        cfg = RefineConfig(step=0.01, iterations=2)
        res = upsample(low, P2PNet(d=4, k=8), InterpolationConfig(rate=2.0), cfg, PatchConfig(patch_size=64))
        # merge reorders points, so match each output to its nearest interpolated point
        assert np.isfinite(res.output.points).all()
        _, d = SpatialIndex(res.interpolated.points).nearest_batch(res.output.points)
        assert d.max() < 0.1


class TestOraclePipeline:
    def test_improves_cd(self, sphere):
        low, gt = sphere
        res = upsample_oracle(low, gt, InterpolationConfig(rate=4.0), RefineConfig(step=0.01, iterations=10))
        assert chamfer(res.output, gt) < chamfer(res.interpolated, gt)
        assert len(res.traces[0].cd_to_gt) == 11

    def test_whole_cloud_in_one_pass(self, sphere):
        low, gt = sphere
        res = upsample_oracle(low, gt, InterpolationConfig(rate=2.0), RefineConfig(step=0.01, iterations=1))
        assert len(res.traces) == 1
