"""Dense pointmaps built from ray fields and radial distances.

Invalid pixels carry ``r = 0`` / a cleared mask bit, never NaN.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import RayField
from .errors import DimensionMismatch, EmptyPointmap
from .geometry import Pose


@dataclass(frozen=True, eq=False)
class RadialMap:
    r: np.ndarray  # (H, W), 0 = invalid

    @property
    def valid(self) -> np.ndarray:
        return self.r > 0

    @property
    def shape(self):
        return self.r.shape


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    sigma: np.ndarray  # (H, W)

    @property
    def shape(self):
        return self.sigma.shape


@dataclass(frozen=True, eq=False)
class Pointmap:
    xyz: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.valid.shape

    def points(self) -> np.ndarray:
        return self.xyz[self.valid]

    def scaled(self, k: float) -> "Pointmap":
        return Pointmap(self.xyz * k, self.valid.copy())


def make_pointmap(rays: RayField, radial: RadialMap) -> Pointmap:
    r = np.asarray(radial.r if isinstance(radial, RadialMap) else radial, dtype=float)
    if r.shape != rays.shape:
        raise DimensionMismatch(f"ray field {rays.shape} vs radial map {r.shape}")
    valid = rays.valid & (r > 0)
    xyz = np.where(valid[..., None], rays.dirs * r[..., None], 0.0)
    return Pointmap(xyz, valid)


def transform_pointmap(pm: Pointmap, pose: Pose) -> Pointmap:
    xyz = np.where(pm.valid[..., None], pose.apply(pm.xyz), 0.0)
    return Pointmap(xyz, pm.valid.copy())


def norm_factor(pm: Pointmap) -> float:
    """Mean distance to the origin over valid pixels."""
    if not pm.valid.any():
        raise EmptyPointmap("pointmap has no valid pixels")
    return float(np.linalg.norm(pm.xyz[pm.valid], axis=-1).mean())


def decompose_pointmap(pm: Pointmap) -> tuple[RayField, RadialMap]:
    r = np.linalg.norm(pm.xyz, axis=-1)
    valid = pm.valid & (r > 0)
    r = np.where(valid, r, 0.0)
    d = np.where(valid[..., None], pm.xyz / np.where(valid, r, 1.0)[..., None], 0.0)
    return RayField(d, valid), RadialMap(r)
