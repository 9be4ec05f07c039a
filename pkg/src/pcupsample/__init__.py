"""Arbitrary-rate point cloud upsampling by descending a learned distance field."""

from .cloud import PointCloud, TriMesh, normalize, denormalize, read_cloud, write_cloud, read_mesh, write_mesh
from .errors import UpsampleError
from .fields import ExactOracle
from .metrics import chamfer, hausdorff, p2f
from .p2pnet import P2PNet, LearnedField, load_params, save_params
from .refine import RefineConfig, refine
from .sampling import InterpolationConfig, fps, midpoint_interpolate
from .spatial import SpatialIndex
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "TriMesh", "normalize", "denormalize", "read_cloud", "write_cloud", "read_mesh",
    "write_mesh", "UpsampleError", "ExactOracle", "chamfer", "hausdorff", "p2f", "P2PNet",
    "LearnedField", "load_params", "save_params", "RefineConfig", "refine", "InterpolationConfig",
    "fps", "midpoint_interpolate", "SpatialIndex", "TrainConfig", "train",
]
