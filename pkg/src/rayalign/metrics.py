"""Relative pose accuracy and trajectory error.

Thresholds are strict: an error equal to tau does not count as accurate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyList
from .geometry import Pose, direction_angle, geodesic_angle, relative_from_c2w, umeyama_align


@dataclass(frozen=True)
class PairErrors:
    rot_err: float  # degrees
    trans_dir_err: float  # degrees

    def __post_init__(self):
        for v in (self.rot_err, self.trans_dir_err):
            if not 0.0 <= v <= 180.0:
                raise ValueError(f"angular error {v} outside [0, 180]")


def _column(errors: Sequence[PairErrors], name: str) -> np.ndarray:
    if len(errors) == 0:
        raise EmptyList("no pair errors")
    return np.array([getattr(e, name) for e in errors], dtype=float)


def rra_at(errors: Sequence[PairErrors], tau: float) -> float:
    return 100.0 * float(np.mean(_column(errors, "rot_err") < tau))


def rta_at(errors: Sequence[PairErrors], tau: float) -> float:
    return 100.0 * float(np.mean(_column(errors, "trans_dir_err") < tau))


def maa(errors: Sequence[PairErrors], tau_max: int = 30) -> float:
    """Mean over t = 1..tau_max of the share of pairs with max(rot, trans) < t."""
    worst = np.maximum(_column(errors, "rot_err"), _column(errors, "trans_dir_err"))
    ts = np.arange(1, int(tau_max) + 1)
    return 100.0 * float(np.mean(worst[None, :] < ts[:, None]))


def ate_rmse(est, gt) -> float:
    """RMSE of camera centers after the with-scale similarity alignment est -> gt."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    sim = umeyama_align(est, gt, with_scale=True)
    return float(np.sqrt(np.mean(np.sum((sim.apply(est) - gt) ** 2, axis=1))))


def pair_error(est_i: Pose, est_j: Pose, gt_i: Pose, gt_j: Pose) -> PairErrors:
    """Errors of the relative motion i -> j between two camera-to-world trajectories.

    A vanishing translation on either side yields a direction error of 0 when
    both vanish and 180 otherwise, so degenerate baselines never count as hits
    by accident.
    """
    rel_e = relative_from_c2w(est_i, est_j)
    rel_g = relative_from_c2w(gt_i, gt_j)
    rot = math.degrees(geodesic_angle(rel_e.R, rel_g.R))
    ne, ng = np.linalg.norm(rel_e.t), np.linalg.norm(rel_g.t)
    if ne < 1e-12 or ng < 1e-12:
        tr = 0.0 if (ne < 1e-12 and ng < 1e-12) else 180.0
    else:
        tr = math.degrees(direction_angle(rel_e.t, rel_g.t))
    return PairErrors(min(rot, 180.0), min(tr, 180.0))


def pair_errors(est: dict, gt: dict, pairs=None) -> list[PairErrors]:
    """Errors over ``pairs`` (default: all unordered pairs of shared view ids)."""
    if pairs is None:
        ids = sorted(set(est) & set(gt))
        pairs = [(a, b) for n, a in enumerate(ids) for b in ids[n + 1:]]
    return [pair_error(est[a], est[b], gt[a], gt[b]) for a, b in pairs]


def evaluate(est: dict, gt: dict, pairs=None) -> dict:
    """The report emitted by the ``eval`` command."""
    errs = pair_errors(est, gt, pairs)
    ids = sorted(set(est) & set(gt))
    return {
        "rra@15": rra_at(errs, 15),
        "rta@15": rta_at(errs, 15),
        "rra@30": rra_at(errs, 30),
        "rta@30": rta_at(errs, 30),
        "maa@30": maa(errs, 30),
        "ate_rmse": ate_rmse([est[v].t for v in ids], [gt[v].t for v in ids]),
        "n_pairs": len(errs),
    }
