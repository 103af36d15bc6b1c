"""Pinhole camera models, calibration file I/O and pixel-space rotation.

Conventions (fixed package-wide):
  * world coordinates in millimeters, right-handed, z up
  * image coordinates: origin at the top-left corner, x right, y down
  * rotation angles in image space are degrees CCW (see ``rotate_pixel``)
  * extrinsics map world points to the camera frame: ``x_cam = R @ x + t``
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


class CalibrationError(ValueError):
    """Base class for calibration-file problems."""


class MalformedCalibration(CalibrationError):
    pass


class NonOrthonormalRotation(CalibrationError):
    pass


class DuplicateCameraId(CalibrationError):
    pass


_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Camera:
    """One calibrated pinhole camera with optional radial/tangential distortion."""

    id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray = field(default_factory=lambda: np.zeros(5))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "dist", np.asarray(self.dist, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float))
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError(f"camera {self.id}: image dimensions must be > 0")
        if self.fx <= 0 or self.fy <= 0:
            raise CalibrationError(f"camera {self.id}: focal lengths must be > 0")
        if self.dist.shape != (5,):
            raise CalibrationError(f"camera {self.id}: dist must have 5 coefficients")
        R = self.rotation
        if R.shape != (3, 3):
            raise CalibrationError(f"camera {self.id}: rotation must be 3x3")
        if (np.abs(R @ R.T - np.eye(3)).max() > _ORTHO_TOL
                or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL):
            raise NonOrthonormalRotation(
                f"camera {self.id}: rotation is not orthonormal with det +1")
        if self.translation.shape != (3,):
            raise CalibrationError(f"camera {self.id}: translation must be a 3-vector")

    @property
    def center(self):
        """Camera center in world coordinates (mm)."""
        return -self.rotation.T @ self.translation

    @property
    def image_center(self):
        return np.array([self.width / 2.0, self.height / 2.0])

    @property
    def has_distortion(self):
        return bool(np.any(self.dist != 0.0))


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise DuplicateCameraId(f"duplicate camera ids in rig: {ids}")

    @property
    def n_c(self):
        return len(self.cameras)

    def camera(self, cam_id) -> Camera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(f"no camera with id {cam_id}")


def project_points(camera: Camera, points):
    """Project world points (N,3) mm to pixels.

    Returns ``(pixels, in_front)`` where pixels is (N,2) and in_front a
    boolean (N,) mask; pixels of points at or behind the camera plane are
    undefined and must be treated as zero-confidence samples by callers.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite point passed to project")
    cam_pts = pts @ camera.rotation.T + camera.translation
    z = cam_pts[:, 2]
    in_front = z > 0.0
    # Guard the division; masked-out pixels are meaningless anyway.
    z_safe = np.where(in_front, z, 1.0)
    x = cam_pts[:, 0] / z_safe
    y = cam_pts[:, 1] / z_safe
    if camera.has_distortion:
        k1, k2, p1, p2, k3 = camera.dist
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        x_d = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        y_d = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x, y = x_d, y_d
    px = np.stack([camera.fx * x + camera.cx, camera.fy * y + camera.cy], axis=1)
    if single:
        return px[0], bool(in_front[0])
    return px, in_front


def project(camera: Camera, point):
    """Project a single world point; see ``project_points``."""
    return project_points(camera, point)


def undistort_normalized(camera: Camera, xd, yd, iterations=8):
    """Invert the distortion model for normalized coordinates (iteratively)."""
    k1, k2, p1, p2, k3 = camera.dist
    x, y = xd, yd
    for _ in range(iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x = (xd - dx) / radial
        y = (yd - dy) / radial
    return x, y


def pixel_to_ray(camera: Camera, pixel):
    """Back-project a pixel to a world ray ``(origin, unit direction)``."""
    px = np.asarray(pixel, dtype=float)
    x = (px[0] - camera.cx) / camera.fx
    y = (px[1] - camera.cy) / camera.fy
    if camera.has_distortion:
        x, y = undistort_normalized(camera, x, y)
    d_cam = np.array([x, y, 1.0])
    d = camera.rotation.T @ d_cam
    return camera.center, d / np.linalg.norm(d)


def rotate_pixel(pixel, angle_deg, center):
    """Map a pixel of the original image to its location in the image rotated
    by ``angle_deg`` CCW about ``center``: ``p' = R(angle) @ (p - center) + center``.

    Accepts a single (2,) pixel or an (N,2) array.
    """
    p = np.asarray(pixel, dtype=float)
    c = np.asarray(center, dtype=float)
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    R = np.array([[ca, -sa], [sa, ca]])
    return (p - c) @ R.T + c


def look_at_camera(cam_id, position, target, width, height, f_px, up=(0.0, 0.0, 1.0)):
    """Build a camera at ``position`` looking at ``target`` (both world mm)."""
    pos = np.asarray(position, dtype=float)
    fwd = np.asarray(target, dtype=float) - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    # Re-orthonormalize so the strict load-time check never trips on round-off.
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    t = -R @ pos
    return Camera(id=cam_id, width=width, height=height, fx=f_px, fy=f_px,
                  cx=width / 2.0, cy=height / 2.0, rotation=R, translation=t)


def _camera_to_dict(c: Camera):
    return {
        "id": int(c.id), "width": int(c.width), "height": int(c.height),
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "dist": [float(v) for v in c.dist],
        "R": [float(v) for v in c.rotation.reshape(-1)],
        "t": [float(v) for v in c.translation],
    }


def save_rig(rig: CameraRig, path):
    payload = {"cameras": [_camera_to_dict(c) for c in rig.cameras]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_rig(path) -> CameraRig:
    """Load and validate a calibration file (see the JSON schema in save_rig)."""
    if not os.path.exists(path):
        raise MalformedCalibration(f"calibration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedCalibration(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(payload, dict) or "cameras" not in payload:
        raise MalformedCalibration(f"{path}: missing top-level 'cameras' list")
    entries = payload["cameras"]
    if not entries:
        raise MalformedCalibration(f"{path}: empty camera list")
    cameras = []
    for entry in entries:
        try:
            cameras.append(Camera(
                id=int(entry["id"]), width=int(entry["width"]),
                height=int(entry["height"]),
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                dist=np.asarray(entry["dist"], dtype=float),
                rotation=np.asarray(entry["R"], dtype=float).reshape(3, 3),
                translation=np.asarray(entry["t"], dtype=float),
            ))
        except NonOrthonormalRotation:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CalibrationError):
                raise
            raise MalformedCalibration(f"{path}: bad camera entry: {exc}") from exc
    return CameraRig(cameras=tuple(cameras))
