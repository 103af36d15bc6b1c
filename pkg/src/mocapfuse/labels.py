"""Canonical keypoint labels and body-part groupings.

The 18 keypoints are the standard body landmarks (joints plus nose, eyes
and ears); every heatmap file, marker set and metric in this package uses
this order.
"""

KEYPOINTS = (
    "nose",
    "neck",
    "r_shoulder",
    "l_shoulder",
    "r_elbow",
    "l_elbow",
    "r_wrist",
    "l_wrist",
    "r_hip",
    "l_hip",
    "r_knee",
    "l_knee",
    "r_ankle",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
)

KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINTS)}

# Body-part groups used for metrics and for tilt-driven rotated sampling.
# Eyes belong to no group; they are still tracked and exported.
HEAD = ("nose", "r_ear", "l_ear")
UPPER_BODY = ("neck", "r_shoulder", "l_shoulder", "r_elbow", "l_elbow",
              "r_wrist", "l_wrist")
LOWER_BODY = ("r_hip", "l_hip", "r_knee", "l_knee", "r_ankle", "l_ankle")
TOTAL = HEAD + UPPER_BODY + LOWER_BODY
