"""Weighted-marker inverse kinematics.

Minimizes sum_n 1/2 * W_n * ||marker_n - FK_n(q)||^2 over the pose vector by
Levenberg-Marquardt on the sqrt(W)-scaled stacked residuals.  Translation
coordinates (mm) and rotation coordinates (radians) are conditioned by a
fixed diagonal scaling (1 rad = 500 mm by default).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import skeleton as sk
from .tracker import VirtualMarkerSet


@dataclass(frozen=True)
class IkSettings:
    max_iterations: int = 50
    step_tol: float = 1e-8          # in scaled coordinates
    residual_tol: float = 1e-4      # mm^2, objective value
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    translation_scale: float = 500.0  # mm per radian-equivalent unit

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("step_tol", "residual_tol", "lambda0", "lambda_up",
                     "lambda_down", "translation_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class IkResult:
    q: np.ndarray
    residual: float        # final objective value, mm^2
    converged: bool
    iterations: int = 0
    no_evidence: bool = False


def _marker_labels(model, markers: VirtualMarkerSet):
    return [lb for lb in markers.positions if lb in model.keypoint_map]


def objective(model, q, markers: VirtualMarkerSet) -> float:
    """The weighted squared marker-fit error at a pose (mm^2)."""
    fk = sk.forward_kinematics(model, q)
    total = 0.0
    for label in _marker_labels(model, markers):
        w = markers.weights.get(label, 0.0)
        if w == 0.0:
            continue
        e = np.asarray(markers.positions[label], dtype=float) - fk[label]
        total += 0.5 * w * float(e @ e)
    return total


def _coordinate_scale(model, settings):
    s = np.ones(model.total_dof)
    qi = 0
    for joint in model.joints:
        for tok in joint.dofs:
            width = 3 if tok == "exp" else 1
            if tok[0] == "t":
                s[qi] = settings.translation_scale
            qi += width
    return s


def _stack_residual(fk, markers, labels, sqrt_w):
    r = np.empty(3 * len(labels))
    for i, label in enumerate(labels):
        e = np.asarray(markers.positions[label], dtype=float) - fk[label]
        r[3 * i:3 * i + 3] = sqrt_w[i] * e
    return r


def _residuals_and_jacobian(model, q, markers, labels, sqrt_w):
    fk, jac = sk.fk_and_jacobians(model, q, labels)
    r = _stack_residual(fk, markers, labels, sqrt_w)
    J = np.empty((3 * len(labels), model.total_dof))
    for i, label in enumerate(labels):
        J[3 * i:3 * i + 3] = sqrt_w[i] * jac[label]
    return r, J


def solve(model, q_init, markers: VirtualMarkerSet,
          settings: IkSettings = IkSettings(), trace_path=None) -> IkResult:
    """Fit the pose to the weighted markers, warm-started at ``q_init``.

    The accepted-step objective sequence is non-increasing; with all weights
    zero the warm start is returned untouched with ``no_evidence`` set.
    """
    q = sk.check_pose(model, q_init).copy()
    labels = [lb for lb in _marker_labels(model, markers)
              if markers.weights.get(lb, 0.0) > 0.0]
    if not labels:
        return IkResult(q=q, residual=0.0, converged=False, no_evidence=True)
    sqrt_w = np.sqrt([markers.weights[lb] for lb in labels])

    scale = _coordinate_scale(model, settings)
    lam = settings.lambda0
    # The objective equals 0.5 * |r|^2 for the sqrt-weighted residual stack.
    r0 = _stack_residual(sk.keypoint_positions(model, q, labels),
                         markers, labels, sqrt_w)
    obj = 0.5 * float(r0 @ r0)
    trace = [(0, lam, obj)]
    converged = False
    iterations = 0
    eye = np.eye(model.total_dof)
    for it in range(1, settings.max_iterations + 1):
        iterations = it
        if obj <= settings.residual_tol:
            converged = True
            break
        r, J = _residuals_and_jacobian(model, q, markers, labels, sqrt_w)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
            raise FloatingPointError("non-finite IK residual or jacobian")
        Js = J * scale[None, :]
        H = Js.T @ Js
        g = Js.T @ r
        # Damping proportional to the mean curvature makes the iterates
        # invariant to a uniform rescaling of all marker weights.
        mu = max(float(np.trace(H)) / H.shape[0], 1e-30)
        accepted = False
        while lam <= 1e12:
            try:
                delta_u = np.linalg.solve(H + lam * mu * eye, g)
            except np.linalg.LinAlgError:
                lam *= settings.lambda_up
                continue
            q_new = q + scale * delta_u
            r_new = _stack_residual(
                sk.keypoint_positions(model, q_new, labels),
                markers, labels, sqrt_w)
            obj_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(obj_new) and obj_new < obj:
                step = float(np.linalg.norm(delta_u))
                q, obj = q_new, obj_new
                lam = max(lam / settings.lambda_down, 1e-12)
                accepted = True
                if step < settings.step_tol:
                    converged = True
                break
            lam *= settings.lambda_up
        trace.append((it, lam, obj))
        if not accepted or converged:
            if not accepted:
                converged = True   # damping exhausted: local minimum
            break
    else:
        converged = obj <= settings.residual_tol

    if trace_path is not None:
        with open(trace_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "lambda", "objective"])
            writer.writerows(trace)
    return IkResult(q=q, residual=obj, converged=converged,
                    iterations=iterations)
