"""Part Confidence Map storage, binary file I/O and sub-pixel sampling.

A heatmap frame holds one camera's 18 per-keypoint confidence grids for one
video frame, possibly computed on a rotated copy of the input image
(``rotation_deg``) and possibly at reduced resolution (``scale``:
heatmap_px = image_px * scale).  Sampling is bilinear; anything outside the
grid, or behind the camera, contributes confidence 0.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .calib import rotate_pixel
from .labels import KEYPOINT_INDEX, KEYPOINTS

MAGIC = b"PCMF"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIfIIIf")


class PcmError(ValueError):
    pass


class PcmFormatError(PcmError):
    """Bad magic, wrong version, truncated payload or out-of-range values."""


class FrameMissing(PcmError):
    """Requested (camera, frame) is not available at rotation 0."""


class RotationUnavailable(PcmError):
    """Requested rotated frame is not available (rotation 0 may still be)."""


@dataclass(frozen=True)
class HeatmapFrame:
    camera_id: int
    frame_index: int
    rotation_deg: float
    width: int
    height: int
    scale: float
    channels: np.ndarray          # (18, height, width), values in [0, 1]
    undistorted: bool = False

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        object.__setattr__(self, "channels", ch)
        if self.width <= 0 or self.height <= 0:
            raise PcmError("heatmap dimensions must be > 0")
        if self.scale <= 0:
            raise PcmError("heatmap scale must be > 0")
        if ch.shape != (len(KEYPOINTS), self.height, self.width):
            raise PcmError(f"channels must be (18, {self.height}, {self.width}), "
                           f"got {ch.shape}")
        lo, hi = float(ch.min(initial=0.0)), float(ch.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise PcmError(f"channel values outside [0, 1]: min={lo}, max={hi}")

    def image_center(self):
        # Center of the full-resolution image this heatmap was computed on.
        return np.array([self.width / self.scale / 2.0,
                         self.height / self.scale / 2.0])


def sample_many(frame: HeatmapFrame, label: str, pixels, valid=None):
    """Bilinear samples of one channel at image-space pixels (N,2).

    ``valid`` optionally masks out entries (e.g. behind-camera projections);
    masked and out-of-grid samples return 0.
    """
    grid = frame.channels[KEYPOINT_INDEX[label]]
    px = np.atleast_2d(np.asarray(pixels, dtype=float)) * frame.scale
    h, w = grid.shape
    x, y = px[:, 0], px[:, 1]
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    if valid is not None:
        inside = inside & np.asarray(valid, dtype=bool)
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(xs.astype(int), w - 2) if w > 1 else np.zeros_like(xs, dtype=int)
    y0 = np.minimum(ys.astype(int), h - 2) if h > 1 else np.zeros_like(ys, dtype=int)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v = ((1 - fx) * (1 - fy) * grid[y0, x0] + fx * (1 - fy) * grid[y0, x1]
         + (1 - fx) * fy * grid[y1, x0] + fx * fy * grid[y1, x1])
    return np.where(inside, v, 0.0)


def sample(frame: HeatmapFrame, label: str, pixel) -> float:
    """Bilinear sample at one image-space pixel; 0 outside the grid."""
    pixel = np.asarray(pixel, dtype=float)
    if not np.all(np.isfinite(pixel)):
        raise PcmError("non-finite pixel passed to sample")
    return float(sample_many(frame, label, pixel[None, :])[0])


def centroid(frame: HeatmapFrame, label: str, floor: float = 0.3):
    """Value-weighted mean position of one channel in image coordinates.

    Cells below ``floor`` are ignored; returns None if nothing qualifies.
    """
    if not (0.0 <= floor < 1.0):
        raise PcmError(f"floor must be in [0, 1), got {floor}")
    grid = frame.channels[KEYPOINT_INDEX[label]]
    mask = grid >= floor if floor > 0 else grid > 0
    if not mask.any():
        return None
    ys, xs = np.nonzero(mask)
    w = grid[ys, xs].astype(float)
    total = w.sum()
    cx = float((xs * w).sum() / total)
    cy = float((ys * w).sum() / total)
    return np.array([cx, cy]) / frame.scale


# ---------------------------------------------------------------------------
# Binary file format

def write_pcm(frame: HeatmapFrame, path):
    flags = 1 if frame.undistorted else 0
    header = _HEADER.pack(MAGIC, VERSION, flags, frame.camera_id,
                          frame.frame_index, frame.rotation_deg,
                          frame.width, frame.height, len(KEYPOINTS), frame.scale)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frame.channels, dtype="<f4").tobytes())


def read_pcm(path) -> HeatmapFrame:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise PcmFormatError(f"{path}: truncated header")
    magic, version, flags, cam_id, frame_index, rot, width, height, nch, scale = \
        _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PcmFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise PcmFormatError(f"{path}: unsupported version {version}")
    if nch != len(KEYPOINTS):
        raise PcmFormatError(f"{path}: expected {len(KEYPOINTS)} channels, got {nch}")
    expected = nch * height * width * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise PcmFormatError(f"{path}: truncated payload "
                             f"({len(payload)} of {expected} bytes)")
    values = np.frombuffer(payload[:expected], dtype="<f4").reshape(nch, height, width)
    if values.min() < 0.0 or values.max() > 1.0:
        raise PcmFormatError(f"{path}: channel values outside [0, 1]")
    return HeatmapFrame(camera_id=cam_id, frame_index=frame_index,
                        rotation_deg=rot, width=width, height=height,
                        scale=scale, channels=values,
                        undistorted=bool(flags & 1))


# ---------------------------------------------------------------------------
# Providers

def quantize_rotation(angle_deg) -> int:
    """Provider cache key for a continuous rotation angle (1 degree bins)."""
    return int(round(float(angle_deg)))


class PcmProvider:
    """Source of heatmap frames keyed by (camera_id, frame_index, rotation)."""

    def get(self, camera_id, frame_index, rotation_deg=0.0) -> HeatmapFrame:
        raise NotImplementedError


class DirectoryProvider(PcmProvider):
    """File-backed store with layout cam{ID}/rot{angle}/frame{N}.pcm."""

    def __init__(self, root):
        self.root = root

    @staticmethod
    def relative_path(camera_id, frame_index, rotation_deg=0.0):
        rot = quantize_rotation(rotation_deg)
        return os.path.join(f"cam{camera_id}", f"rot{rot}", f"frame{frame_index}.pcm")

    def path_for(self, camera_id, frame_index, rotation_deg=0.0):
        return os.path.join(self.root,
                            self.relative_path(camera_id, frame_index, rotation_deg))

    def get(self, camera_id, frame_index, rotation_deg=0.0) -> HeatmapFrame:
        path = self.path_for(camera_id, frame_index, rotation_deg)
        if not os.path.exists(path):
            if quantize_rotation(rotation_deg) == 0:
                raise FrameMissing(
                    f"no PCM for camera {camera_id} frame {frame_index}")
            raise RotationUnavailable(
                f"no PCM for camera {camera_id} frame {frame_index} "
                f"at rotation {quantize_rotation(rotation_deg)} deg")
        frame = read_pcm(path)
        if frame.camera_id != camera_id or frame.frame_index != frame_index:
            raise PcmFormatError(
                f"{path}: header (cam {frame.camera_id}, frame "
                f"{frame.frame_index}) does not match its location")
        return frame


def sample_rotated(provider: PcmProvider, camera, frame_index, rotation_deg,
                   label, pixel_original) -> float:
    """Sample a keypoint channel at an original-image pixel through a rotated
    heatmap: the pixel is mapped into the rotated image frame first.

    Raises RotationUnavailable when the provider lacks the rotated frame.
    """
    frame = provider.get(camera.id, frame_index, rotation_deg)
    px = pixel_original
    if frame.rotation_deg != 0.0:
        px = rotate_pixel(px, frame.rotation_deg, camera.image_center)
    return sample(frame, label, px)
