"""Tree-structured kinematic chain: topology, forward kinematics, Jacobians.

The default human model has 40 generalized coordinates: a 6-DOF free root
(pelvis), exponential-map 3-DOF joints for waist/chest/neck/head, shoulders
and hips, single-axis elbows/knees/wrists and 2-DOF ankles.  Keypoints are
either joints of the chain or fixed offsets on the head segment (nose, eyes,
ears).

Pose vector layout: root translation (mm, 3), root orientation as an
exponential-map 3-vector, then the remaining joints' rotational coordinates
(radians) in model order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .labels import KEYPOINTS

_AXES = {
    "tx": np.array([1.0, 0.0, 0.0]),
    "ty": np.array([0.0, 1.0, 0.0]),
    "tz": np.array([0.0, 0.0, 1.0]),
    "rx": np.array([1.0, 0.0, 0.0]),
    "ry": np.array([0.0, 1.0, 0.0]),
    "rz": np.array([0.0, 0.0, 1.0]),
}

_DOF_WIDTH = {"tx": 1, "ty": 1, "tz": 1, "rx": 1, "ry": 1, "rz": 1, "exp": 3}


class SkeletonError(ValueError):
    pass


def skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _rodrigues_family(w, a, b):
    # I + a*[w]x + b*[w]x^2 without intermediate allocations
    x, y, z = w
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - b * (yy + zz)
    out[0, 1] = -a * z + b * xy
    out[0, 2] = a * y + b * xz
    out[1, 0] = a * z + b * xy
    out[1, 1] = 1.0 - b * (xx + zz)
    out[1, 2] = -a * x + b * yz
    out[2, 0] = -a * y + b * xz
    out[2, 1] = a * x + b * yz
    out[2, 2] = 1.0 - b * (xx + yy)
    return out


def exp_so3(w):
    """Rodrigues' rotation from an axis-angle 3-vector."""
    t2 = float(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    theta = math.sqrt(t2)
    if theta < 1e-10:
        return _rodrigues_family(w, 1.0, 0.5)
    return _rodrigues_family(w, math.sin(theta) / theta,
                             (1.0 - math.cos(theta)) / t2)


def left_jacobian_so3(w):
    """Left Jacobian of SO(3): d/dw of the exponential map's action."""
    t2 = float(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    theta = math.sqrt(t2)
    if theta < 1e-6:
        return _rodrigues_family(w, 0.5, 1.0 / 6.0)
    return _rodrigues_family(w, (1.0 - math.cos(theta)) / t2,
                             (theta - math.sin(theta)) / (t2 * theta))


def _axis_rotation(token, angle):
    c, s = math.cos(angle), math.sin(angle)
    out = np.zeros((3, 3))
    if token == "rx":
        out[0, 0] = 1.0
        out[1, 1] = c
        out[1, 2] = -s
        out[2, 1] = s
        out[2, 2] = c
    elif token == "ry":
        out[1, 1] = 1.0
        out[0, 0] = c
        out[0, 2] = s
        out[2, 0] = -s
        out[2, 2] = c
    else:
        out[2, 2] = 1.0
        out[0, 0] = c
        out[0, 1] = -s
        out[1, 0] = s
        out[1, 1] = c
    return out


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int            # index into the joint list, -1 for the root
    direction: np.ndarray  # unit vector in the parent frame
    length: float          # mm, offset from parent joint along direction
    dofs: tuple            # dof tokens: tx/ty/tz/rx/ry/rz/exp

    def __post_init__(self):
        object.__setattr__(self, "direction",
                           np.asarray(self.direction, dtype=float))
        object.__setattr__(self, "dofs", tuple(self.dofs))
        for tok in self.dofs:
            if tok not in _DOF_WIDTH:
                raise SkeletonError(f"joint {self.name}: unknown dof token {tok!r}")

    @property
    def ndof(self):
        return sum(_DOF_WIDTH[t] for t in self.dofs)


@dataclass(frozen=True)
class SkeletonModel:
    """Immutable kinematic chain plus keypoint attachment map.

    ``keypoint_map`` maps a keypoint label either to a joint name or to
    ``(joint name, local offset 3-vector)`` for points rigidly attached to a
    segment frame.
    """

    joints: tuple
    keypoint_map: dict

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        roots = [j for j in self.joints if j.parent < 0]
        if len(roots) != 1 or self.joints[0].parent != -1:
            raise SkeletonError("model must have exactly one root, listed first")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise SkeletonError("joints must be listed parents-first")
            if j.parent >= 0 and j.length <= 0:
                raise SkeletonError(f"joint {j.name}: link length must be > 0")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise SkeletonError("duplicate joint names")
        for label, ref in self.keypoint_map.items():
            jname = ref[0] if isinstance(ref, tuple) else ref
            if jname not in names:
                raise SkeletonError(f"keypoint {label}: unknown joint {jname}")
        object.__setattr__(self, "_total_dof",
                           sum(j.ndof for j in self.joints))
        object.__setattr__(self, "_joint_index",
                           {j.name: i for i, j in enumerate(self.joints)})

    @property
    def total_dof(self):
        return self._total_dof

    @property
    def joint_index(self):
        return self._joint_index

    def link_lengths(self):
        return {j.name: j.length for j in self.joints if j.parent >= 0}


def with_link_lengths(model: SkeletonModel, lengths: dict) -> SkeletonModel:
    """Return a copy of the model with the given link lengths substituted."""
    index = model.joint_index
    for name, value in lengths.items():
        if name not in index:
            raise SkeletonError(f"unknown joint in length map: {name}")
        if model.joints[index[name]].parent < 0:
            raise SkeletonError(f"root joint {name} has no link length")
        if not (value > 0):
            raise SkeletonError(f"link length for {name} must be > 0, got {value}")
    joints = tuple(
        Joint(j.name, j.parent, j.direction,
              lengths.get(j.name, j.length), j.dofs)
        for j in model.joints)
    return SkeletonModel(joints=joints, keypoint_map=dict(model.keypoint_map))


def with_keypoint_offsets(model: SkeletonModel, offsets: dict) -> SkeletonModel:
    """Replace the local offsets of segment-attached keypoints (e.g. face points)."""
    kmap = dict(model.keypoint_map)
    for label, off in offsets.items():
        ref = kmap[label]
        if not isinstance(ref, tuple):
            raise SkeletonError(f"keypoint {label} is a joint, not an offset point")
        kmap[label] = (ref[0], np.asarray(off, dtype=float))
    return SkeletonModel(joints=model.joints, keypoint_map=kmap)


def check_pose(model: SkeletonModel, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (model.total_dof,):
        raise SkeletonError(
            f"pose length {q.shape} does not match model dof {model.total_dof}")
    if not np.all(np.isfinite(q)):
        raise SkeletonError("pose contains non-finite values")
    return q


def _frames(model: SkeletonModel, q):
    """FK pass returning per-joint world position/rotation and per-dof records.

    Each dof record is ``(joint_index, kind, data...)`` where kind is "t"
    (data: world axis), "r" (world axis, joint origin) or "exp"
    (pre-rotation, origin, coordinates).  Records are aligned with q: "exp"
    consumes three consecutive entries.
    """
    q = check_pose(model, q)
    n = len(model.joints)
    pos = np.zeros((n, 3))
    rot = np.zeros((n, 3, 3))
    dof_records = []
    qi = 0
    for ji, joint in enumerate(model.joints):
        if joint.parent < 0:
            p = np.zeros(3)
            R = np.eye(3)
        else:
            p = pos[joint.parent] + rot[joint.parent] @ (joint.direction * joint.length)
            R = rot[joint.parent].copy()
        for tok in joint.dofs:
            if tok[0] == "t":
                axis = R @ _AXES[tok]
                p = p + q[qi] * axis
                dof_records.append((ji, "t", axis))
                qi += 1
            elif tok == "exp":
                w = q[qi:qi + 3].copy()
                dof_records.append((ji, "exp", R.copy(), p.copy(), w))
                R = R @ exp_so3(w)
                qi += 3
            else:
                axis = R @ _AXES[tok]
                dof_records.append((ji, "r", axis, p.copy()))
                R = R @ _axis_rotation(tok, q[qi])
                qi += 1
        pos[ji] = p
        rot[ji] = R
    return pos, rot, dof_records


def _keypoint_position(model, pos, rot, label):
    ref = model.keypoint_map[label]
    idx = model.joint_index
    if isinstance(ref, tuple):
        ji = idx[ref[0]]
        return pos[ji] + rot[ji] @ np.asarray(ref[1], dtype=float), ji, True
    ji = idx[ref]
    return pos[ji].copy(), ji, False


def forward_kinematics(model: SkeletonModel, q) -> dict:
    """World positions (mm) of every joint and every mapped keypoint."""
    pos, rot, _ = _frames(model, q)
    out = {}
    for ji, joint in enumerate(model.joints):
        out[joint.name] = pos[ji].copy()
    for label in model.keypoint_map:
        p, _, _ = _keypoint_position(model, pos, rot, label)
        out[label] = p
    return out


def _chain_to_root(model, ji):
    chain = set()
    while ji >= 0:
        chain.add(ji)
        ji = model.joints[ji].parent
    return chain


def jacobian(model: SkeletonModel, q, target: str):
    """3 x total_dof matrix of d(target position)/dq.

    ``target`` may be a joint name or a keypoint label.  Columns of DOFs not
    on the root-to-target chain are zero.
    """
    return _jacobian_from_frames(model, _frames(model, q), target)


def jacobians(model: SkeletonModel, q, targets):
    """Jacobians of several targets sharing one forward-kinematics pass."""
    frames = _frames(model, q)
    return {t: _jacobian_from_frames(model, frames, t) for t in targets}


def keypoint_positions(model: SkeletonModel, q, targets):
    """World positions of selected keypoint labels only (one FK pass)."""
    pos, rot, _ = _frames(model, q)
    return {t: _keypoint_position(model, pos, rot, t)[0] for t in targets}


def fk_and_jacobians(model: SkeletonModel, q, targets):
    """Positions and jacobians of several targets from one FK pass."""
    frames = _frames(model, q)
    pos, rot, _ = frames
    positions = {}
    for t in targets:
        if t in model.keypoint_map:
            positions[t] = _keypoint_position(model, pos, rot, t)[0]
        else:
            positions[t] = pos[model.joint_index[t]].copy()
    return positions, {t: _jacobian_from_frames(model, frames, t)
                       for t in targets}


def _jacobian_from_frames(model, frames, target):
    pos, rot, dof_records = frames
    idx = model.joint_index
    if target in model.keypoint_map:
        p_t, ji_t, attached = _keypoint_position(model, pos, rot, target)
        chain = _chain_to_root(model, ji_t)
        # A point rigidly attached to a segment moves with that segment's own
        # rotational dofs; a joint origin does not move with its own rotation.
        chain_rot = chain if attached else chain - {ji_t}
    elif target in idx:
        ji_t = idx[target]
        p_t = pos[ji_t]
        chain = _chain_to_root(model, ji_t)
        chain_rot = chain - {ji_t}
    else:
        raise SkeletonError(f"unknown jacobian target: {target}")

    J = np.zeros((3, model.total_dof))
    qi = 0
    for rec in dof_records:
        ji, kind = rec[0], rec[1]
        width = 3 if kind == "exp" else 1
        if kind == "t":
            if ji in chain:
                J[:, qi] = rec[2]
        elif kind == "r":
            if ji in chain_rot:
                axis, origin = rec[2], rec[3]
                J[:, qi] = np.cross(axis, p_t - origin)
        else:  # exp
            if ji in chain_rot:
                R_pre, origin, w = rec[2], rec[3], rec[4]
                J[:, qi:qi + 3] = -skew(p_t - origin) @ R_pre @ left_jacobian_so3(w)
        qi += width
    return J


# ---------------------------------------------------------------------------
# Default human model

# Reference pose: upright T-pose facing +y, z up, subject's right along +x.
# Lengths are template defaults in mm; real subjects get theirs identified
# from triangulated keypoint centroids at initialization.
_HUMAN_SPEC = [
    # name, parent, direction, length, dofs
    ("pelvis", None, (0, 0, 1), 0.0, ("tx", "ty", "tz", "exp")),
    ("waist", "pelvis", (0, 0, 1), 150.0, ("exp",)),
    ("chest", "waist", (0, 0, 1), 180.0, ("exp",)),
    ("neck", "chest", (0, 0, 1), 170.0, ("exp",)),
    ("head", "neck", (0, 0, 1), 120.0, ("exp",)),
    ("r_shoulder", "neck", (1, 0, 0), 180.0, ("exp",)),
    ("r_elbow", "r_shoulder", (1, 0, 0), 300.0, ("rz",)),
    ("r_wrist", "r_elbow", (1, 0, 0), 250.0, ("rz",)),
    ("l_shoulder", "neck", (-1, 0, 0), 180.0, ("exp",)),
    ("l_elbow", "l_shoulder", (-1, 0, 0), 300.0, ("rz",)),
    ("l_wrist", "l_elbow", (-1, 0, 0), 250.0, ("rz",)),
    ("r_hip", "pelvis", (1, 0, 0), 100.0, ("exp",)),
    ("r_knee", "r_hip", (0, 0, -1), 420.0, ("rx",)),
    ("r_ankle", "r_knee", (0, 0, -1), 400.0, ("rx", "ry")),
    ("l_hip", "pelvis", (-1, 0, 0), 100.0, ("exp",)),
    ("l_knee", "l_hip", (0, 0, -1), 420.0, ("rx",)),
    ("l_ankle", "l_knee", (0, 0, -1), 400.0, ("rx", "ry")),
]

# Face keypoints ride on the head segment (offsets in the head frame, mm).
_HUMAN_FACE_OFFSETS = {
    "nose": (0.0, 90.0, 40.0),
    "r_eye": (30.0, 80.0, 60.0),
    "l_eye": (-30.0, 80.0, 60.0),
    "r_ear": (70.0, 10.0, 50.0),
    "l_ear": (-70.0, 10.0, 50.0),
}


def human_skeleton() -> SkeletonModel:
    """The default 40-DOF human model in its reference proportions."""
    name_to_idx = {}
    joints = []
    for name, parent, direction, length, dofs in _HUMAN_SPEC:
        pidx = -1 if parent is None else name_to_idx[parent]
        d = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm > 0:
            d = d / norm
        joints.append(Joint(name, pidx, d, length, dofs))
        name_to_idx[name] = len(joints) - 1
    kmap = {}
    for label in KEYPOINTS:
        if label in _HUMAN_FACE_OFFSETS:
            kmap[label] = ("head", np.asarray(_HUMAN_FACE_OFFSETS[label]))
        else:
            kmap[label] = label
    model = SkeletonModel(joints=tuple(joints), keypoint_map=kmap)
    assert model.total_dof == 40
    return model


def scaled_human_skeleton(scale: float) -> SkeletonModel:
    """Template model uniformly scaled (used by the synthetic generator)."""
    base = human_skeleton()
    lengths = {k: v * scale for k, v in base.link_lengths().items()}
    model = with_link_lengths(base, lengths)
    offsets = {k: np.asarray(v) * scale for k, v in _HUMAN_FACE_OFFSETS.items()}
    return with_keypoint_offsets(model, offsets)


# ---------------------------------------------------------------------------
# Skeleton description file

def save_skeleton(model: SkeletonModel, path):
    joints = []
    for j in model.joints:
        joints.append({
            "name": j.name,
            "parent": None if j.parent < 0 else model.joints[j.parent].name,
            "direction": [float(v) for v in j.direction],
            "length": float(j.length),
            "dofs": list(j.dofs),
        })
    keypoints = {}
    for label, ref in model.keypoint_map.items():
        if isinstance(ref, tuple):
            keypoints[label] = {"joint": ref[0],
                                "offset": [float(v) for v in ref[1]]}
        else:
            keypoints[label] = {"joint": ref}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"joints": joints, "keypoints": keypoints}, fh, indent=2)
        fh.write("\n")


def load_skeleton(path) -> SkeletonModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    name_to_idx = {}
    joints = []
    for entry in payload["joints"]:
        parent = entry["parent"]
        pidx = -1 if parent is None else name_to_idx[parent]
        joints.append(Joint(entry["name"], pidx,
                            np.asarray(entry["direction"], dtype=float),
                            float(entry["length"]), tuple(entry["dofs"])))
        name_to_idx[entry["name"]] = len(joints) - 1
    kmap = {}
    for label, entry in payload["keypoints"].items():
        if "offset" in entry:
            kmap[label] = (entry["joint"], np.asarray(entry["offset"], dtype=float))
        else:
            kmap[label] = entry["joint"]
    return SkeletonModel(joints=tuple(joints), keypoint_map=kmap)
