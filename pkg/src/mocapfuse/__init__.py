"""mocapfuse: multi-camera human motion reconstruction from part
confidence maps, with skeletal IK and two-pass temporal smoothing."""

__version__ = "0.1.0"

from .calib import Camera, CameraRig, load_rig, save_rig  # noqa: F401
from .labels import KEYPOINTS  # noqa: F401
from .pipeline import MotionSequence, PipelineConfig, initialize, track  # noqa: F401
from .skeleton import SkeletonModel, forward_kinematics, human_skeleton  # noqa: F401
