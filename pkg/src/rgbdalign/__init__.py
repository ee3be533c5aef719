"""Dense RGB-D alignment: feature-metric and geometric least-squares tracking.

The package estimates the relative rigid motion between two RGB-D frames by
minimising an uncertainty-normalised multi-channel feature difference with a
coarse-to-fine, inverse-compositional, damped Gauss-Newton solver, optionally
fused with a point-to-plane ICP term.
"""

from .errors import AlignmentError
from .geometry import CameraIntrinsics, Pose, backproject, compose, exp, inverse, log, project
from .imagegrid import DenseMap, Pyramid, build_pyramid, gradient, sample_bilinear
from .features import Frame, FeatureProviderSpec, make_frame
from .residuals import NormalEquations, build_feature_system, build_icp_system, combine
from .solver import SolverConfig, TrackResult, initialize, track
from .dataset import SynthScene, load_sequence, make_pair, subsample_pairs
from .evaluation import TrajectoryRecord, accumulate, epe, rpe

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "CameraIntrinsics",
    "Pose",
    "backproject",
    "compose",
    "exp",
    "inverse",
    "log",
    "project",
    "DenseMap",
    "Pyramid",
    "build_pyramid",
    "gradient",
    "sample_bilinear",
    "Frame",
    "FeatureProviderSpec",
    "make_frame",
    "NormalEquations",
    "build_feature_system",
    "build_icp_system",
    "combine",
    "SolverConfig",
    "TrackResult",
    "initialize",
    "track",
    "SynthScene",
    "load_sequence",
    "make_pair",
    "subsample_pairs",
    "TrajectoryRecord",
    "accumulate",
    "epe",
    "rpe",
]
