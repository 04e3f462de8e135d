"""Lifting per-frame hand reconstructions to camera-frame 4D trajectories.

Modules cover a kinematic hand model, camera geometry, trajectory
lifting, alignment metrics, test-time refinement, toy adapter attention and
a synthetic benchmark. See the README for a tour.
"""

__version__ = "0.1.0"

from .camera import Intrinsics, WeakPerspCam, default_intrinsics, perspective_project, weak_project, weak_to_full, wtf_depth_sensitivity
from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DivergenceError,
    FormatError,
    HandTrajError,
    InsufficientEvidence,
    InsufficientPoints,
    InvalidArgument,
    SequenceTooShort,
    ShortSequenceWarning,
    UnitError,
    VersionError,
)
from .kinematics import HandPose, HandShape, HandTemplate, default_template, forward_kinematics
from .lift import (
    DepthMap,
    FramePrediction,
    Trajectory,
    WindowConfig,
    lift_depth_change,
    lift_depth_change_windowed,
    lift_depthmap,
    lift_depthmap_sequence,
    lift_wtf,
    split_windows,
    stitch_windows,
)
from .metrics import MetricReport, acc_norm, evaluate, fa_mpjpe, ga_mpjpe, pa_mpjpe, pck, umeyama_similarity
from .optim import TTOConfig, refine

__all__ = [
    "__version__",
    "Intrinsics",
    "WeakPerspCam",
    "default_intrinsics",
    "perspective_project",
    "weak_project",
    "weak_to_full",
    "wtf_depth_sensitivity",
    "BehindCamera",
    "DegenerateConfiguration",
    "DivergenceError",
    "FormatError",
    "HandTrajError",
    "InsufficientEvidence",
    "InsufficientPoints",
    "InvalidArgument",
    "SequenceTooShort",
    "ShortSequenceWarning",
    "UnitError",
    "VersionError",
    "HandPose",
    "HandShape",
    "HandTemplate",
    "default_template",
    "forward_kinematics",
    "DepthMap",
    "FramePrediction",
    "Trajectory",
    "WindowConfig",
    "lift_depth_change",
    "lift_depth_change_windowed",
    "lift_depthmap",
    "lift_depthmap_sequence",
    "lift_wtf",
    "split_windows",
    "stitch_windows",
    "MetricReport",
    "acc_norm",
    "evaluate",
    "fa_mpjpe",
    "ga_mpjpe",
    "pa_mpjpe",
    "pck",
    "umeyama_similarity",
    "TTOConfig",
    "refine",
]
