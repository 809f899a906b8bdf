"""Point-to-plane ICP with output covariance estimation.

The covariance of an ICP estimate combines a closed-form sensor-noise term
(white noise plus a per-registration bias) with an initialization term
estimated by propagating 12 sigma points through ICP.
"""

from .cloud import PointCloud, estimate_normals
from .covariance import CovarianceReport, NoiseParams, estimate, ml_fuse, sensor_covariance, unscented_init_term
from .icp import IcpConfig, IcpResult, IllConditionedSystem, RegistrationError, register
from .se3 import Pose, PoseGaussian

__all__ = [
    "CovarianceReport",
    "IcpConfig",
    "IcpResult",
    "IllConditionedSystem",
    "NoiseParams",
    "PointCloud",
    "Pose",
    "PoseGaussian",
    "RegistrationError",
    "estimate",
    "estimate_normals",
    "ml_fuse",
    "register",
    "sensor_covariance",
    "unscented_init_term",
]
