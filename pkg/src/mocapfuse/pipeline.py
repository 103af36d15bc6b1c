"""End-to-end reconstruction: initialization, per-frame tracking, outputs.

Initialization triangulates the per-camera confidence-map centroids over a
run of frames until they agree in 3D, identifies the subject's link lengths
from the triangulated keypoints and fits the initial pose.  Tracking then
alternates lattice search, weighted IK and the smoothing re-solve, frame by
frame.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ik as ik_mod
from . import pcm as pcm_mod
from . import skeleton as sk
from . import smooth as smooth_mod
from . import tracker as tracker_mod
from .calib import CameraRig, pixel_to_ray
from .labels import KEYPOINTS
from .tracker import LatticeConfig, VirtualMarkerSet

log = logging.getLogger("mocapfuse.pipeline")


class DegenerateGeometry(ValueError):
    pass


class InitializationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Triangulation

def triangulate(pixels: dict, rig: CameraRig):
    """Least-squares 3D point from per-camera pixels {camera_id: (2,)}.

    Minimizes the summed squared distances to the back-projected rays.
    Returns (point mm, rms ray distance).  Fewer than two rays, or
    near-parallel rays, raise DegenerateGeometry.
    """
    if len(pixels) < 2:
        raise DegenerateGeometry(
            f"triangulation needs >= 2 cameras, got {len(pixels)}")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    rays = []
    for cam_id, px in pixels.items():
        origin, d = pixel_to_ray(rig.camera(cam_id), px)
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ origin
        rays.append((origin, d))
    w, _ = np.linalg.eigh(A)
    if w[0] <= 0 or w[-1] / w[0] > 1e8:
        raise DegenerateGeometry("near-parallel rays: triangulation ill-conditioned")
    point = np.linalg.solve(A, b)
    sq = 0.0
    for origin, d in rays:
        v = point - origin
        perp = v - (v @ d) * d
        sq += float(perp @ perp)
    return point, float(np.sqrt(sq / len(rays)))


# ---------------------------------------------------------------------------
# Configuration and sequence record

@dataclass(frozen=True)
class InitSettings:
    centroid_floor: float = 0.3
    agreement_residual_mm: float = 20.0
    min_agreement_frames: int = 10
    max_search_frames: int = 120

    def __post_init__(self):
        if self.agreement_residual_mm <= 0:
            raise ValueError("agreement residual must be > 0")
        if self.min_agreement_frames < 1:
            raise ValueError("min_agreement_frames must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    ik: ik_mod.IkSettings = field(default_factory=ik_mod.IkSettings)
    filter: smooth_mod.FilterSpec = field(
        default_factory=lambda: smooth_mod.FilterSpec(cutoff_hz=5.0,
                                                      sample_rate_hz=60.0))
    init: InitSettings = field(default_factory=InitSettings)
    lattice_center: str = "stage2"       # or "stage1"
    low_confidence_fraction: float = 0.05  # of n_c; flags, never drops

    def __post_init__(self):
        if self.lattice_center not in ("stage1", "stage2"):
            raise ValueError("lattice_center must be 'stage1' or 'stage2'")


@dataclass
class FrameRecord:
    index: int
    time_s: float
    pose_stage1: np.ndarray
    pose_stage2: np.ndarray
    positions_stage1: dict
    positions_stage2: dict
    weights: dict
    rotations: dict                  # camera_id -> planned angle, deg
    low_confidence: tuple = ()
    per_camera: dict = field(default_factory=dict)   # label -> (n_c,) samples
    lattice_offsets: dict = field(default_factory=dict)  # label -> (a, b, c)

    def total_score(self):
        return float(sum(self.weights.values()))


@dataclass
class MotionSequence:
    frames: list
    sample_rate_hz: float

    def positions(self, stage="stage2"):
        key = "positions_" + stage
        return [getattr(f, key) for f in self.frames]

    def frame_indices(self):
        return [f.index for f in self.frames]


# ---------------------------------------------------------------------------
# Initialization

def _triangulated_keypoints(provider, rig, frame_index, floor):
    """Triangulate every keypoint's centroid for one frame.

    Returns (points {label: (3,)}, residuals {label: mm}, missing labels).
    """
    frames = {}
    for camera in rig.cameras:
        frames[camera.id] = provider.get(camera.id, frame_index, 0.0)
    points, residuals, missing = {}, {}, []
    for label in KEYPOINTS:
        pixels = {}
        for camera in rig.cameras:
            c = pcm_mod.centroid(frames[camera.id], label, floor)
            if c is not None:
                pixels[camera.id] = c
        try:
            p, r = triangulate(pixels, rig)
        except DegenerateGeometry:
            missing.append(label)
            continue
        points[label] = p
        residuals[label] = r
    return points, residuals, missing


def _joint_keypoint_labels(model):
    return [lb for lb in KEYPOINTS
            if not isinstance(model.keypoint_map[lb], tuple)]


def _identify_lengths(model, tri_frames):
    """Map median inter-keypoint distances onto the skeleton's links.

    Directly observable links take the median distance between their end
    keypoints; the trunk column (pelvis->waist->chest->neck) splits the
    hip-midpoint-to-neck distance by the template's proportions.
    """
    def med(fn):
        return float(np.median([fn(tf) for tf in tri_frames]))

    pairs = {
        "r_shoulder": ("neck", "r_shoulder"), "l_shoulder": ("neck", "l_shoulder"),
        "r_elbow": ("r_shoulder", "r_elbow"), "l_elbow": ("l_shoulder", "l_elbow"),
        "r_wrist": ("r_elbow", "r_wrist"), "l_wrist": ("l_elbow", "l_wrist"),
        "r_knee": ("r_hip", "r_knee"), "l_knee": ("l_hip", "l_knee"),
        "r_ankle": ("r_knee", "r_ankle"), "l_ankle": ("l_knee", "l_ankle"),
    }
    lengths = {}
    for link, (a, b) in pairs.items():
        lengths[link] = med(lambda tf, a=a, b=b:
                            np.linalg.norm(tf[a] - tf[b]))
    half_hip = med(lambda tf: 0.5 * np.linalg.norm(tf["r_hip"] - tf["l_hip"]))
    lengths["r_hip"] = half_hip
    lengths["l_hip"] = half_hip
    trunk = med(lambda tf: np.linalg.norm(
        tf["neck"] - 0.5 * (tf["r_hip"] + tf["l_hip"])))
    template = {j.name: j.length for j in model.joints}
    t_sum = template["waist"] + template["chest"] + template["neck"]
    for link in ("waist", "chest", "neck"):
        lengths[link] = trunk * template[link] / t_sum
    # Head link length is unobservable from keypoints; scale it with the trunk.
    lengths["head"] = template["head"] * trunk / t_sum
    return lengths


def _fit_pose_to_points(model, points, q_init, settings):
    labels = [lb for lb in _joint_keypoint_labels(model) if lb in points]
    markers = VirtualMarkerSet(positions={lb: points[lb] for lb in labels},
                               weights={lb: 1.0 for lb in labels})
    return ik_mod.solve(model, q_init, markers, settings)


def _seed_pose(model, points):
    """Cheap pose seed: root translation at the hip midpoint, root yaw from
    the hip axis, everything else zero."""
    q = np.zeros(model.total_dof)
    midhip = 0.5 * (points["r_hip"] + points["l_hip"])
    q[0:3] = midhip
    hip_axis = points["r_hip"] - points["l_hip"]
    yaw = float(np.arctan2(hip_axis[1], hip_axis[0]))
    q[3:6] = np.array([0.0, 0.0, yaw])
    return q


def initialize(provider, rig: CameraRig, skeleton_template, config: PipelineConfig):
    """Identify link lengths and the initial pose from an agreement run.

    Scans frames from 0 for a run of ``min_agreement_frames`` consecutive
    frames in which every keypoint triangulates with residual below the
    threshold.  Returns (model, pose0, positions0, first_track_frame).
    """
    settings = config.init
    run = []          # list of (frame_index, points dict)
    worst = {}
    for frame_index in range(settings.max_search_frames):
        try:
            points, residuals, missing = _triangulated_keypoints(
                provider, rig, frame_index, settings.centroid_floor)
        except pcm_mod.FrameMissing:
            break
        bad = list(missing)
        for label, r in residuals.items():
            if r >= settings.agreement_residual_mm:
                bad.append(label)
        if bad:
            for label in bad:
                worst[label] = worst.get(label, 0) + 1
            run = []
            continue
        run.append((frame_index, points))
        if len(run) >= settings.min_agreement_frames:
            break
    if len(run) < settings.min_agreement_frames:
        ranking = sorted(worst.items(), key=lambda kv: -kv[1])
        raise InitializationError(
            "no 3D agreement run found; worst keypoints: "
            + (", ".join(f"{lb} ({n} frames)" for lb, n in ranking[:5])
               or "none triangulated"))

    tri_frames = [points for _, points in run]
    model = sk.with_link_lengths(skeleton_template,
                                 _identify_lengths(skeleton_template, tri_frames))

    # Fit a pose per agreement frame (warm-started along the run), collect the
    # face-point offsets in the head frame, take their medians.
    q = _seed_pose(model, tri_frames[0])
    face_labels = [lb for lb in KEYPOINTS
                   if isinstance(model.keypoint_map[lb], tuple)]
    offsets = {lb: [] for lb in face_labels}
    for points in tri_frames:
        q = _fit_pose_to_points(model, points, q, config.ik).q
        pos, rot, _ = sk._frames(model, q)
        idx = model.joint_index
        for lb in face_labels:
            if lb not in points:
                continue
            jname = model.keypoint_map[lb][0]
            ji = idx[jname]
            offsets[lb].append(rot[ji].T @ (points[lb] - pos[ji]))
    med_offsets = {lb: np.median(np.stack(v), axis=0)
                   for lb, v in offsets.items() if v}
    model = sk.with_keypoint_offsets(model, med_offsets)

    last_frame, last_points = run[-1]
    result = _fit_pose_to_points(model, last_points, q, config.ik)
    pose0 = result.q
    positions0 = sk.forward_kinematics(model, pose0)
    return model, pose0, positions0, last_frame + 1


# ---------------------------------------------------------------------------
# Tracking

def track(provider, rig: CameraRig, model, pose0, config: PipelineConfig,
          frame_range) -> MotionSequence:
    """Run the per-frame loop over ``frame_range`` (iterable of indices).

    Each frame: plan per-camera rotations from the previous frame's output,
    lattice-search every keypoint, solve weighted IK (stage 1), then filter
    and re-solve (stage 2).  Deterministic for identical inputs.
    """
    cfg = config.lattice
    fps = config.filter.sample_rate_hz
    traj_filter = smooth_mod.TrajectoryFilter(config.filter)
    pose_prev = sk.check_pose(model, pose0).copy()
    positions_prev = sk.forward_kinematics(model, pose_prev)
    frames = []
    stage1_cache = []   # kept for offline filtering mode
    for frame_index in frame_range:
        if cfg.rotation_enabled:
            rotations = tracker_mod.plan_rotations(positions_prev, rig, cfg)
        else:
            rotations = {c.id: 0.0 for c in rig.cameras}
        marker_pos, weights, per_camera, chosen = {}, {}, {}, {}
        for label in KEYPOINTS:
            try:
                p, score, cams = tracker_mod.lattice_search(
                    positions_prev, label, provider, rig, cfg, frame_index,
                    rotations)
            except pcm_mod.FrameMissing as exc:
                raise pcm_mod.FrameMissing(
                    f"frame {frame_index}: {exc}") from exc
            marker_pos[label] = p
            weights[label] = score
            per_camera[label] = cams
            chosen[label] = tuple(
                int(round(v)) for v in (p - positions_prev[label]) / cfg.s)
        markers = VirtualMarkerSet(positions=marker_pos, weights=weights,
                                   per_camera=per_camera)
        low_conf = tuple(lb for lb in KEYPOINTS
                         if weights[lb] < config.low_confidence_fraction * rig.n_c)
        if low_conf:
            log.debug("frame %s: low-confidence keypoints %s",
                      frame_index, low_conf)
        result1 = ik_mod.solve(model, pose_prev, markers, config.ik)
        q1 = result1.q
        if result1.no_evidence:
            log.info("frame %s: no PCM evidence, holding previous pose",
                     frame_index)
        positions1 = sk.forward_kinematics(model, q1)
        q2, _ = smooth_mod.smooth_and_refit(model, q1, traj_filter, config.ik)
        positions2 = sk.forward_kinematics(model, q2)
        frames.append(FrameRecord(
            index=frame_index, time_s=frame_index / fps,
            pose_stage1=q1, pose_stage2=q2,
            positions_stage1=positions1, positions_stage2=positions2,
            weights=weights, rotations=rotations, low_confidence=low_conf,
            per_camera=per_camera, lattice_offsets=chosen))
        stage1_cache.append(q1)
        pose_prev = q2
        positions_prev = (positions2 if config.lattice_center == "stage2"
                          else positions1)

    if config.filter.mode == "offline" and frames:
        _refit_offline(model, frames, stage1_cache, config)
    return MotionSequence(frames=frames, sample_rate_hz=fps)


def _refit_offline(model, frames, stage1_poses, config):
    """Replace stage-2 output with a zero-phase (forward-backward) variant."""
    coeffs = smooth_mod.design_biquad(config.filter)
    traj = np.stack([
        np.concatenate([f.positions_stage1[lb] for lb in KEYPOINTS])
        for f in frames])
    smoothed = smooth_mod.filtfilt(coeffs, traj)
    q_prev = stage1_poses[0]
    for f, q1, row in zip(frames, stage1_poses, smoothed):
        markers = VirtualMarkerSet(
            positions={lb: row[3 * i:3 * i + 3]
                       for i, lb in enumerate(KEYPOINTS)},
            weights={lb: 1.0 for lb in KEYPOINTS})
        result = ik_mod.solve(model, q_prev, markers, config.ik)
        f.pose_stage2 = result.q
        f.positions_stage2 = sk.forward_kinematics(model, result.q)
        q_prev = result.q


# ---------------------------------------------------------------------------
# Output files

def write_positions_csv(seq: MotionSequence, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "time_s", "label", "x_mm", "y_mm", "z_mm",
                         "weight", "stage"])
        for f in seq.frames:
            for stage, positions in (("stage1", f.positions_stage1),
                                     ("stage2", f.positions_stage2)):
                for label in KEYPOINTS:
                    p = positions[label]
                    writer.writerow([f.index, repr(f.time_s), label,
                                     repr(float(p[0])), repr(float(p[1])),
                                     repr(float(p[2])),
                                     repr(float(f.weights[label])), stage])


def read_positions_csv(path, stage="stage2"):
    """Read back a positions CSV into (frame indices, list of label->pos)."""
    per_frame = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["stage"] != stage:
                continue
            idx = int(row["frame"])
            per_frame.setdefault(idx, {})[row["label"]] = np.array(
                [float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])])
    indices = sorted(per_frame)
    return indices, [per_frame[i] for i in indices]


def write_pose_csv(seq: MotionSequence, path):
    ndof = len(seq.frames[0].pose_stage2) if seq.frames else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "time_s"] + [f"q{i}" for i in range(ndof)])
        for f in seq.frames:
            writer.writerow([f.index, repr(f.time_s)]
                            + [repr(float(v)) for v in f.pose_stage2])


def write_run_metadata(path, config: PipelineConfig, model, extra=None):
    payload = {
        "version": 1,
        "config": {
            "lattice": {"s": config.lattice.s, "k": config.lattice.k,
                        "tilt_threshold_deg": config.lattice.tilt_threshold_deg,
                        "rotation_enabled": config.lattice.rotation_enabled},
            "ik": {"max_iterations": config.ik.max_iterations,
                   "residual_tol": config.ik.residual_tol,
                   "step_tol": config.ik.step_tol,
                   "lambda0": config.ik.lambda0,
                   "translation_scale": config.ik.translation_scale},
            "filter": {"cutoff_hz": config.filter.cutoff_hz,
                       "sample_rate_hz": config.filter.sample_rate_hz,
                       "mode": config.filter.mode},
            "init": {"centroid_floor": config.init.centroid_floor,
                     "agreement_residual_mm": config.init.agreement_residual_mm,
                     "min_agreement_frames": config.init.min_agreement_frames},
            "lattice_center": config.lattice_center,
        },
        "link_lengths_mm": {k: float(v) for k, v in model.link_lengths().items()},
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_diagnostics_csv(seq: MotionSequence, rig: CameraRig, path):
    """Per-frame, per-joint tracking diagnostics: chosen lattice offset,
    marker weight and per-camera confidence samples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cam_cols = [f"sample_cam{c.id}" for c in rig.cameras]
        writer.writerow(["frame", "label", "a", "b", "c", "weight",
                         "low_confidence"] + cam_cols)
        for f in seq.frames:
            for label in KEYPOINTS:
                off = f.lattice_offsets.get(label, ("", "", ""))
                cams = f.per_camera.get(label, np.zeros(rig.n_c))
                writer.writerow([f.index, label, off[0], off[1], off[2],
                                 repr(float(f.weights[label])),
                                 int(label in f.low_confidence)]
                                + [repr(float(v)) for v in cams])
