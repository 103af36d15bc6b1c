"""Accuracy metrics (MPJPE, 3D-PCK) with body-part groupings, plus the
per-frame error/score series used for plotting.

MPJPE pools all (frame, joint) pairs of the group into one mean; PCK counts
pairs with error strictly below the threshold.  No alignment transform is
applied: both sequences live in the same calibrated world frame.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import labels as lb


@dataclass(frozen=True)
class PartGroup:
    name: str
    labels: tuple

    def __post_init__(self):
        for label in self.labels:
            if label not in lb.KEYPOINTS:
                raise ValueError(f"unknown keypoint label {label!r}")


HEAD = PartGroup("Head", lb.HEAD)
UPPER_BODY = PartGroup("UpperBody", lb.UPPER_BODY)
LOWER_BODY = PartGroup("LowerBody", lb.LOWER_BODY)
TOTAL = PartGroup("Total", lb.TOTAL)
GROUPS = (HEAD, UPPER_BODY, LOWER_BODY, TOTAL)


def _errors(pred_frames, gt_frames, group: PartGroup):
    if len(pred_frames) != len(gt_frames):
        raise ValueError(f"frame count mismatch: {len(pred_frames)} vs "
                         f"{len(gt_frames)}")
    errs = np.empty((len(pred_frames), len(group.labels)))
    for i, (pred, gt) in enumerate(zip(pred_frames, gt_frames)):
        for j, label in enumerate(group.labels):
            if label not in pred or label not in gt:
                raise KeyError(f"label {label!r} missing at frame {i}")
            errs[i, j] = np.linalg.norm(np.asarray(pred[label], dtype=float)
                                        - np.asarray(gt[label], dtype=float))
    return errs


def mpjpe(pred_frames, gt_frames, group: PartGroup = TOTAL) -> float:
    """Mean per joint position error in mm over all (frame, joint) pairs."""
    return float(_errors(pred_frames, gt_frames, group).mean())


def pck3d(pred_frames, gt_frames, group: PartGroup = TOTAL,
          tau: float = 50.0) -> float:
    """Percentage of (frame, joint) pairs with 3D error < tau mm."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    errs = _errors(pred_frames, gt_frames, group)
    return float(100.0 * (errs < tau).mean())


SERIES_HEADER = ["frame", "mpjpe_total", "mpjpe_lowerbody",
                 "pcm_score_total", "rotated_cameras"]


def emit_series(seq, gt_frames, path):
    """Per-frame CSV: total and lower-body MPJPE, total PCM score and how
    many cameras used a rotated render; enough to plot error/score series."""
    if len(seq.frames) != len(gt_frames):
        raise ValueError("sequence and ground truth differ in frame count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for f, gt in zip(seq.frames, gt_frames):
            e_tot = mpjpe([f.positions_stage2], [gt], TOTAL)
            e_low = mpjpe([f.positions_stage2], [gt], LOWER_BODY)
            rotated = sum(1 for a in f.rotations.values() if a != 0.0)
            writer.writerow([f.index, repr(e_tot), repr(e_low),
                             repr(f.total_score()), rotated])


def summary(pred_frames, gt_frames, taus=(50.0, 100.0, 150.0)) -> dict:
    """Per-group MPJPE and 3D-PCK table as a JSON-friendly dict."""
    out = {"mpjpe_mm": {}, "pck_percent": {}}
    for group in GROUPS:
        out["mpjpe_mm"][group.name] = mpjpe(pred_frames, gt_frames, group)
    for tau in taus:
        key = f"@{int(tau)}mm"
        out["pck_percent"][key] = {
            group.name: pck3d(pred_frames, gt_frames, group, tau)
            for group in GROUPS}
    return out


def write_summary(pred_frames, gt_frames, path, taus=(50.0, 100.0, 150.0)):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary(pred_frames, gt_frames, taus), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
