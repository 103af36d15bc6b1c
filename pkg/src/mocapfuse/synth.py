"""Synthetic multi-camera scenes: ground-truth motion, virtual rigs and
rendered Gaussian confidence maps.

Every channel is a Gaussian bump centered at the projected ground-truth
keypoint, clamped to [0, 1].  Optional degradations: peak jitter, amplitude
noise, false peaks, and a tilt-bias model that fades lower-body confidence
and blurs its peak locations as the trunk tilts away from the image
vertical (restored when the render is computed on a tilt-aligned, i.e.
rotated, image) to emulate a detector trained mostly on upright people.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import pcm as pcm_mod
from . import skeleton as sk
from .calib import CameraRig, look_at_camera, project_points, rotate_pixel, save_rig
from .labels import KEYPOINTS, KEYPOINT_INDEX, LOWER_BODY
from .tracker import trunk_tilt


@dataclass(frozen=True)
class DofCurve:
    """offset + sum of sinusoids for one generalized coordinate."""
    offset: float = 0.0
    amp: float = 0.0
    freq_hz: float = 0.0
    phase: float = 0.0

    def value(self, t):
        return self.offset + self.amp * math.sin(
            2.0 * math.pi * self.freq_hz * t + self.phase)


@dataclass(frozen=True)
class MotionProgram:
    """Per-DOF parametric curves with an initial neutral hold.

    During the first ``hold_frames`` frames the pose is the program at t=0;
    the initializer needs a quiet, near-reference segment.
    """
    curves: dict                   # dof index -> DofCurve
    hold_frames: int = 12
    name: str = "custom"

    def pose(self, frame_index, fps, ndof=40):
        t = max(0.0, (frame_index - self.hold_frames)) / fps
        q = np.zeros(ndof)
        for idx, curve in self.curves.items():
            q[idx] = curve.value(t)
        return q


@dataclass(frozen=True)
class NoiseModel:
    jitter_px: float = 0.0         # std of the peak-center offset
    amplitude_std: float = 0.0     # relative peak amplitude noise
    false_peak_rate: float = 0.0   # per channel per render


@dataclass(frozen=True)
class TiltBias:
    """Detector degradation on tilted bodies, for lower-body channels.

    The peak amplitude multiplier is 1 below ``full_at_deg`` and falls
    linearly to ``floor`` at 180 degrees of |trunk tilt|; at the same time
    the peak location acquires a Gaussian localization error growing from 0
    to ``jitter_px``.  Both are computed against the vertical of the image
    actually rendered, so a tilt-aligned (rotated) render is unaffected.
    """
    enabled: bool = False
    full_at_deg: float = 45.0
    floor: float = 0.15
    jitter_px: float = 6.0    # peak localization error std at full bias

    def multiplier(self, tilt_deg):
        a = abs(float(tilt_deg))
        if not self.enabled or a <= self.full_at_deg:
            return 1.0
        frac = (a - self.full_at_deg) / (180.0 - self.full_at_deg)
        return 1.0 + (self.floor - 1.0) * min(frac, 1.0)

    def jitter_std(self, tilt_deg):
        mult = self.multiplier(tilt_deg)
        if mult >= 1.0 or self.jitter_px <= 0.0:
            return 0.0
        return self.jitter_px * (1.0 - mult) / (1.0 - self.floor)


@dataclass(frozen=True)
class SceneSpec:
    motion: MotionProgram
    camera_count: int = 4
    camera_distance_mm: float = 4200.0
    camera_height_mm: float = 1500.0
    look_at_mm: tuple = (0.0, 0.0, 1000.0)
    image_width: int = 1024
    image_height: int = 768
    focal_px: float = 700.0
    fps: float = 60.0
    sigma_px: float = 8.0
    heatmap_scale: float = 0.5
    subject_scale: float = 1.0
    root_height_mm: float = 1000.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    tilt_bias: TiltBias = field(default_factory=TiltBias)
    seed: int = 0

    def __post_init__(self):
        if self.sigma_px <= 0:
            raise ValueError("sigma_px must be > 0")
        if self.camera_count < 2:
            raise ValueError("at least 2 cameras required")
        if not (0.0 <= self.tilt_bias.floor <= 1.0):
            raise ValueError("tilt bias floor must be in [0, 1]")


def build_rig(spec: SceneSpec) -> CameraRig:
    """Cameras at the corners of a square around the capture volume."""
    cams = []
    r = spec.camera_distance_mm
    for i in range(spec.camera_count):
        angle = 2.0 * math.pi * (i + 0.5) / spec.camera_count
        pos = (r * math.cos(angle), r * math.sin(angle), spec.camera_height_mm)
        cams.append(look_at_camera(i, pos, spec.look_at_mm,
                                   spec.image_width, spec.image_height,
                                   spec.focal_px))
    return CameraRig(cameras=tuple(cams))


def build_model(spec: SceneSpec) -> sk.SkeletonModel:
    return sk.scaled_human_skeleton(spec.subject_scale)


def ground_truth_pose(spec: SceneSpec, frame_index):
    q = spec.motion.pose(frame_index, spec.fps)
    q[2] += spec.root_height_mm
    return q


def ground_truth_positions(spec: SceneSpec, frame_index, model=None) -> dict:
    """World positions of all keypoints at one frame (the eval oracle)."""
    if frame_index < 0:
        raise ValueError(f"frame index {frame_index} out of range")
    model = model or build_model(spec)
    return sk.forward_kinematics(model, ground_truth_pose(spec, frame_index))


def _channel_rng(spec, camera_id, frame_index, rotation_key, channel):
    # Independent, order-insensitive stream per rendered channel.
    return np.random.default_rng(
        (spec.seed, camera_id, frame_index, rotation_key, channel))


def _splat(grid, center_hm, amplitude, sigma_hm):
    """Add a Gaussian bump to a heatmap grid (windowed at 5 sigma) and clamp
    the touched window to [0, 1]."""
    h, w = grid.shape
    cx, cy = center_hm
    r = 5.0 * sigma_hm
    x0, x1 = max(0, int(cx - r)), min(w, int(cx + r) + 2)
    y0, y1 = max(0, int(cy - r)), min(h, int(cy + r) + 2)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) - cx
    ys = np.arange(y0, y1) - cy
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    window = grid[y0:y1, x0:x1]
    window += amplitude * np.exp(-d2 / (2.0 * sigma_hm * sigma_hm))
    np.clip(window, 0.0, 1.0, out=window)


def render_frame(spec: SceneSpec, camera, frame_index, rotation_deg=0.0,
                 model=None) -> pcm_mod.HeatmapFrame:
    """Render one camera's heatmap frame, optionally on the rotated image."""
    model = model or build_model(spec)
    gt = ground_truth_positions(spec, frame_index, model)
    w = int(round(spec.image_width * spec.heatmap_scale))
    h = int(round(spec.image_height * spec.heatmap_scale))
    sigma_hm = spec.sigma_px * spec.heatmap_scale
    center = camera.image_center
    rot_key = pcm_mod.quantize_rotation(rotation_deg)

    # Trunk tilt of the ground truth in this camera, for the bias model.
    tilt = None
    if spec.tilt_bias.enabled:
        px, in_front = project_points(
            camera, np.stack([gt["neck"], 0.5 * (gt["r_hip"] + gt["l_hip"])]))
        if in_front[0] and in_front[1]:
            try:
                tilt = trunk_tilt(px[0], px[1])
            except ValueError:
                tilt = None

    channels = np.zeros((len(KEYPOINTS), h, w), dtype=np.float32)
    noise = spec.noise
    for label in KEYPOINTS:
        ch = KEYPOINT_INDEX[label]
        px, in_front = project_points(camera, gt[label])
        if not in_front:
            continue
        p = rotate_pixel(px, rotation_deg, center)
        amplitude = 1.0
        if tilt is not None and label in LOWER_BODY:
            # Tilt as seen in the rendered (possibly rotated) image.
            eff = tilt - rotation_deg
            eff = (eff + 180.0) % 360.0 - 180.0
            amplitude *= spec.tilt_bias.multiplier(eff)
            jitter_std = spec.tilt_bias.jitter_std(eff)
            if jitter_std > 0.0:
                # Separate stream from the NoiseModel draws below.
                brng = _channel_rng(spec, camera.id, frame_index, rot_key,
                                    100 + ch)
                p = p + brng.normal(0.0, jitter_std, 2)
        rng = None
        if noise.jitter_px or noise.amplitude_std or noise.false_peak_rate:
            rng = _channel_rng(spec, camera.id, frame_index, rot_key, ch)
        if rng is not None and noise.jitter_px:
            p = p + rng.normal(0.0, noise.jitter_px, 2)
        if rng is not None and noise.amplitude_std:
            amplitude *= max(0.0, 1.0 + rng.normal(0.0, noise.amplitude_std))
        _splat(channels[ch], np.asarray(p) * spec.heatmap_scale, amplitude,
               sigma_hm)
        if rng is not None and noise.false_peak_rate:
            if rng.random() < noise.false_peak_rate:
                fp = rng.uniform([0, 0], [w - 1, h - 1])
                _splat(channels[ch], fp, rng.uniform(0.3, 0.8), sigma_hm)
    return pcm_mod.HeatmapFrame(
        camera_id=camera.id, frame_index=frame_index,
        rotation_deg=float(rot_key), width=w, height=h,
        scale=spec.heatmap_scale, channels=channels, undistorted=True)


class SyntheticProvider(pcm_mod.PcmProvider):
    """Renders heatmap frames on demand; any rotation angle is available."""

    def __init__(self, spec: SceneSpec, rig: CameraRig = None,
                 n_frames=None, cache_size=16):
        self.spec = spec
        self.rig = rig or build_rig(spec)
        self.model = build_model(spec)
        self.n_frames = n_frames
        self.cache_size = cache_size
        self._cache = {}

    def get(self, camera_id, frame_index, rotation_deg=0.0):
        if self.n_frames is not None and not (0 <= frame_index < self.n_frames):
            raise pcm_mod.FrameMissing(
                f"synthetic scene has {self.n_frames} frames, "
                f"requested {frame_index}")
        key = (camera_id, frame_index, pcm_mod.quantize_rotation(rotation_deg))
        if key not in self._cache:
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = render_frame(
                self.spec, self.rig.camera(camera_id), frame_index,
                float(key[2]), self.model)
        return self._cache[key]


# ---------------------------------------------------------------------------
# Motion presets

# Pose vector layout of the default human model (see skeleton._HUMAN_SPEC):
#   0-2 root translation, 3-5 root orientation, 6-8 waist, 9-11 chest,
#   12-14 neck, 15-17 head, 18-20 r_shoulder, 21 r_elbow, 22 r_wrist,
#   23-25 l_shoulder, 26 l_elbow, 27 l_wrist, 28-30 r_hip, 31 r_knee,
#   32-33 r_ankle, 34-36 l_hip, 37 l_knee, 38-39 l_ankle
Q_ROOT_RX = 3
Q_ROOT_RY = 4
Q_R_SHOULDER_Y = 19
Q_L_SHOULDER_Y = 24
Q_R_ELBOW = 21
Q_L_ELBOW = 26
Q_R_HIP_X = 28
Q_L_HIP_X = 34
Q_R_KNEE = 31
Q_L_KNEE = 37


def walk_like(hold_frames=12) -> MotionProgram:
    """Gentle in-place gait: alternating hip/knee swing, counter arm swing,
    slight lateral sway.  Amplitudes keep per-frame joint motion well inside
    a +-30 mm lattice at 60 Hz."""
    f = 0.4
    curves = {
        0: DofCurve(amp=30.0, freq_hz=f),                       # lateral sway
        2: DofCurve(amp=15.0, freq_hz=2 * f, phase=math.pi / 2),  # bounce
        Q_R_HIP_X: DofCurve(amp=0.20, freq_hz=f),
        Q_L_HIP_X: DofCurve(amp=0.20, freq_hz=f, phase=math.pi),
        Q_R_KNEE: DofCurve(offset=0.15, amp=0.15, freq_hz=f, phase=math.pi),
        Q_L_KNEE: DofCurve(offset=0.15, amp=0.15, freq_hz=f),
        Q_R_SHOULDER_Y: DofCurve(amp=0.15, freq_hz=f, phase=math.pi),
        Q_L_SHOULDER_Y: DofCurve(amp=-0.15, freq_hz=f),
        Q_R_ELBOW: DofCurve(offset=0.2, amp=0.10, freq_hz=f),
        Q_L_ELBOW: DofCurve(offset=-0.2, amp=0.10, freq_hz=f),
    }
    return MotionProgram(curves=curves, hold_frames=hold_frames, name="walk")


def handstand_like(hold_frames=12, period_s=8.0) -> MotionProgram:
    """Slow full inversion and back: the root pitches through 180 degrees
    about the lateral axis, arms raised overhead."""
    curves = {
        # pitch = pi/2 * (1 - cos(2 pi t / T)): 0 -> pi -> 0 over one period
        Q_ROOT_RX: DofCurve(amp=math.pi / 2, freq_hz=1.0 / period_s,
                            phase=-math.pi / 2, offset=math.pi / 2),
        Q_R_SHOULDER_Y: DofCurve(offset=-1.2),
        Q_L_SHOULDER_Y: DofCurve(offset=1.2),
    }
    return MotionProgram(curves=curves, hold_frames=hold_frames,
                         name="handstand")


def cartwheel_like(hold_frames=12, period_s=8.0) -> MotionProgram:
    """Slow roll about the forward axis through inversion and back."""
    curves = {
        Q_ROOT_RY: DofCurve(amp=math.pi / 2, freq_hz=1.0 / period_s,
                            phase=-math.pi / 2, offset=math.pi / 2),
    }
    return MotionProgram(curves=curves, hold_frames=hold_frames,
                         name="cartwheel")


def bent_elbow_like(hold_frames=12) -> MotionProgram:
    """Elbows bent near 90 degrees and swinging briskly while the shoulders
    rotate slowly; naive filtering of positions visibly changes the forearm
    length on this motion."""
    curves = {
        Q_R_ELBOW: DofCurve(offset=math.pi / 2, amp=0.4, freq_hz=2.0),
        Q_L_ELBOW: DofCurve(offset=-math.pi / 2, amp=-0.4, freq_hz=2.0),
        18: DofCurve(amp=0.3, freq_hz=0.5),
        23: DofCurve(amp=-0.3, freq_hz=0.5),
    }
    return MotionProgram(curves=curves, hold_frames=hold_frames,
                         name="bent_elbow")


PRESETS = {
    "walk": walk_like,
    "handstand": handstand_like,
    "cartwheel": cartwheel_like,
    "bent_elbow": bent_elbow_like,
}


# ---------------------------------------------------------------------------
# Dataset generation (files)

def spec_to_json(spec: SceneSpec):
    payload = asdict(spec)
    payload["motion"] = {"preset": spec.motion.name,
                         "hold_frames": spec.motion.hold_frames}
    return payload


def spec_from_json(payload) -> SceneSpec:
    motion = payload.pop("motion")
    preset = PRESETS[motion["preset"]]
    payload = dict(payload)
    payload["noise"] = NoiseModel(**payload.get("noise", {}))
    payload["tilt_bias"] = TiltBias(**payload.get("tilt_bias", {}))
    payload["look_at_mm"] = tuple(payload.get("look_at_mm", (0, 0, 1000)))
    return SceneSpec(motion=preset(hold_frames=motion.get("hold_frames", 12)),
                     **payload)


def generate(spec: SceneSpec, n_frames, out_dir):
    """Write a complete synthetic dataset: calibration, rotation-0 PCM files
    and ground-truth motion, in the formats the pipeline consumes.

    Returns (ground truth positions per frame, rig).
    """
    os.makedirs(out_dir, exist_ok=True)
    rig = build_rig(spec)
    model = build_model(spec)
    save_rig(rig, os.path.join(out_dir, "calib.json"))
    with open(os.path.join(out_dir, "scene.json"), "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    gt_frames = []
    pcm_root = os.path.join(out_dir, "pcm")
    for frame_index in range(n_frames):
        gt_frames.append(ground_truth_positions(spec, frame_index, model))
        for camera in rig.cameras:
            frame = render_frame(spec, camera, frame_index, 0.0, model)
            rel = pcm_mod.DirectoryProvider.relative_path(camera.id, frame_index)
            path = os.path.join(pcm_root, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            pcm_mod.write_pcm(frame, path)
    _write_ground_truth_csv(spec, gt_frames,
                            os.path.join(out_dir, "ground_truth.csv"))
    return gt_frames, rig


def _write_ground_truth_csv(spec, gt_frames, path):
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "time_s", "label", "x_mm", "y_mm", "z_mm"])
        for i, positions in enumerate(gt_frames):
            for label in KEYPOINTS:
                p = positions[label]
                writer.writerow([i, repr(i / spec.fps), label,
                                 repr(float(p[0])), repr(float(p[1])),
                                 repr(float(p[2]))])


def read_ground_truth_csv(path):
    import csv
    per_frame = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["frame"])
            per_frame.setdefault(idx, {})[row["label"]] = np.array(
                [float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])])
    indices = sorted(per_frame)
    return indices, [per_frame[i] for i in indices]
