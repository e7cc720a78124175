"""Reference implementations of the two-view training objectives.

These are plain numpy formulas used as oracles and simulator diagnostics;
there is no autograd and no training loop. Sums run over pixels (not means),
so values grow with resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPointmap, LengthMismatch
from .geometry import Pose, geodesic_angle
from .pointmap import Pointmap


@dataclass(frozen=True)
class LossWeights:
    alpha_theta: float = 0.7
    alpha_phi: float = 0.5
    beta: float = 0.5
    lambda_pose: float = 1.0  # weight inside the pose term: lambda * (rot + trans)
    lambda_A: float = 1.0
    lambda_regr: float = 1.0
    lambda_pose_total: float = 1.0  # weight of the pose term in the total loss

    def __post_init__(self):
        for name in ("alpha_theta", "alpha_phi", "beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("lambda_pose", "lambda_A", "lambda_regr", "lambda_pose_total"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def ray_angles(dirs) -> tuple[np.ndarray, np.ndarray]:
    """Unit rays -> (polar angle from the optical axis, azimuth around it)."""
    d = np.asarray(dirs, dtype=float)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    return theta, phi


def asym_angular_loss(pred, gt, alpha: float) -> float:
    """Quantile (pinball) loss: underestimates weigh ``alpha``, the rest ``1 - alpha``."""
    pred = np.asarray(pred, dtype=float).ravel()
    gt = np.asarray(gt, dtype=float).ravel()
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {gt.size} targets")
    # exactly rounded sum: independent of term order, and alpha = 0.5 gives
    # half the L1 distance bit for bit
    w = np.where(pred < gt, alpha, 1.0 - alpha)
    return math.fsum(w * np.abs(pred - gt))


def total_angular_loss(pred_theta, gt_theta, pred_phi, gt_phi, weights: LossWeights = LossWeights()) -> float:
    return (weights.beta * asym_angular_loss(pred_theta, gt_theta, weights.alpha_theta)
            + (1.0 - weights.beta) * asym_angular_loss(pred_phi, gt_phi, weights.alpha_phi))


def local_regression_loss(pred1: Pointmap, gt1: Pointmap, pred2: Pointmap, gt2: Pointmap) -> float:
    """Scale-normalized squared point error summed over both views.

    The valid set of each view is the intersection of the predicted and the
    ground-truth masks; both normalizers are computed over that set.
    """
    total = 0.0
    for pred, gt in ((pred1, gt1), (pred2, gt2)):
        if pred.shape != gt.shape:
            raise ValueError(f"pointmap shapes differ: {pred.shape} vs {gt.shape}")
        m = pred.valid & gt.valid
        if not m.any():
            raise EmptyPointmap("no jointly valid pixels")
        p, g = pred.xyz[m], gt.xyz[m]
        eta = np.linalg.norm(p, axis=-1).mean()
        eta_gt = np.linalg.norm(g, axis=-1).mean()
        total += float(np.sum((p / eta - g / eta_gt) ** 2))
    return total


def pose_loss(pred: Pose, gt_rot, gt_trans, scale_s: float, lam: float = 1.0) -> tuple[float, float, float]:
    """(rotation geodesic, squared translation error to ``s * t_gt``, ``lam * (rot + trans)``)."""
    if not scale_s > 0:
        raise ValueError("scale_s must be positive")
    rot = geodesic_angle(pred.R, gt_rot)
    trans = float(np.sum((pred.t - scale_s * np.asarray(gt_trans, dtype=float)) ** 2))
    return rot, trans, lam * (rot + trans)


def total_loss(components, weights: LossWeights = LossWeights()) -> float:
    """``lambda_A * L_A + lambda_regr * L_regr + lambda_pose_total * L_pose``.

    ``components`` is a mapping with keys ``angular``, ``regr`` and ``pose``,
    or a 3-sequence in that order.
    """
    if isinstance(components, dict):
        la, lr, lp = components["angular"], components["regr"], components["pose"]
    else:
        la, lr, lp = components
    return float(weights.lambda_A * la + weights.lambda_regr * lr + weights.lambda_pose_total * lp)
