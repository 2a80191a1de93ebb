"""telelens: predictive-display teleoperation at desk scale.

Library layout mirrors the pipeline stages: rigid-body math (``se3``),
serial-chain kinematics (``kinematics``), camera and distortion models
(``camera``), sample-accurate delay lines (``delay``), master-to-slave
command generation (``teleop``), hand-eye calibration (``calibration``)
and online tracking (``tracker``), stereo overlay rendering (``overlay``),
and the closed-loop synthetic simulator (``sim``).
"""

from telelens.se3 import (
    Pose,
    Quaternion,
    Rpy,
    SmootherParams,
    compose,
    from_rpy,
    rotation_geodesic,
    slerp_blend,
    to_rpy,
    translation_blend,
)

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "Quaternion",
    "Rpy",
    "SmootherParams",
    "compose",
    "from_rpy",
    "rotation_geodesic",
    "slerp_blend",
    "to_rpy",
    "translation_blend",
    "__version__",
]
