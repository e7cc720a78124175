"""Synthetic two-view oracle: analytic scenes, ground-truth trajectories,
pair curation and noisy/outlier edge synthesis with known ground truth.

All randomness derives from one master seed. Per-edge generators are seeded
with ``(seed, pair_index, direction)`` so results do not depend on the order
in which edges are produced.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .cameras import CameraSpec, EquirectCamera, FisheyeCamera, PinholeCamera
from .errors import RayEscapes
from .geometry import Pose, axis_angle, geodesic_angle, random_rotation, relative_from_c2w
from .pointmap import ConfidenceMap, Pointmap, RadialMap, make_pointmap
from .scenegraph import EdgeObservation, SceneGraph, View

_EPS = 1e-9


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def intersect(self, o, d):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # axis-parallel rays: slab is (-inf, inf) when inside it, empty otherwise
        par = d == 0
        inside = (o >= lo) & (o <= hi)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tn, tf = tmin.max(-1), tmax.min(-1)
        hit = tf >= tn
        t = np.where(tn > _EPS, tn, tf)
        return np.where(hit & (t > _EPS), t, np.inf)

    def on_surface(self, x, tol=1e-9):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        inside = np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)
        face = np.any((np.abs(x - lo) <= tol) | (np.abs(x - hi) <= tol), axis=-1)
        return inside & face


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def intersect(self, o, d):
        oc = o - np.asarray(self.center, float)
        b = np.sum(oc * d, -1)
        c = np.sum(oc * oc, -1) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1, t2 = -b - sq, -b + sq
        t = np.where(t1 > _EPS, t1, t2)
        return np.where((disc >= 0) & (t > _EPS), t, np.inf)

    def on_surface(self, x, tol=1e-9):
        return np.abs(np.linalg.norm(x - np.asarray(self.center, float), axis=-1) - self.radius) <= tol


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple

    def intersect(self, o, d):
        n = np.asarray(self.normal, float)
        den = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point, float) - o) @ n) / den
        return np.where(np.isfinite(t) & (t > _EPS), t, np.inf)

    def on_surface(self, x, tol=1e-9):
        n = np.asarray(self.normal, float)
        return np.abs((x - np.asarray(self.point, float)) @ n) / np.linalg.norm(n) <= tol


Primitive = Union[Box, Sphere, Plane]


@dataclass(frozen=True)
class SceneGeometry:
    primitives: tuple

    def cast(self, origin, dirs) -> np.ndarray:
        """Nearest positive hit distance per ray (``inf`` on a miss)."""
        o = np.broadcast_to(np.asarray(origin, float), dirs.shape)
        t = np.full(dirs.shape[:-1], np.inf)
        for p in self.primitives:
            t = np.minimum(t, p.intersect(o, dirs))
        return t

    def on_surface(self, x, tol=1e-9) -> np.ndarray:
        ok = np.zeros(x.shape[:-1], dtype=bool)
        for p in self.primitives:
            ok |= p.on_surface(x, tol)
        return ok


def default_geometry() -> SceneGeometry:
    """6 x 3 x 4 room (y down, floor at y = 1.5) with two boxes and a sphere."""
    return SceneGeometry((
        Box((-3.0, -1.5, -2.0), (3.0, 1.5, 2.0)),
        Box((-2.7, 0.6, 1.0), (-1.7, 1.5, 1.9)),
        Box((1.6, 0.2, -1.9), (2.8, 1.5, -1.1)),
        Sphere((0.9, 0.8, 1.4), 0.45),
    ))


def render_pointmap(geom: SceneGeometry, pose: Pose, cam_rays) -> tuple[Pointmap, RadialMap]:
    """Ray-cast a camera (camera-to-world ``pose``) against the scene.

    ``cam_rays`` is the camera's :class:`RayField`. Returns the local-frame
    pointmap and the radial map; invalid pixels keep ``r = 0``.
    """
    world_dirs = cam_rays.dirs @ pose.R.T
    t = geom.cast(pose.t, world_dirs)
    t = np.where(cam_rays.valid, t, 0.0)
    if np.any(~np.isfinite(t)):
        raise RayEscapes(f"{int((~np.isfinite(t)).sum())} rays miss every primitive")
    radial = RadialMap(t)
    return make_pointmap(cam_rays, radial), radial


# -- trajectories and cameras -----------------------------------------------

def look_at(position, target) -> Pose:
    """Camera-to-world pose at ``position`` looking at ``target`` (y down)."""
    p = np.asarray(position, float)
    z = np.asarray(target, float) - p
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), p)


def loop_trajectory(n: int, radii=(1.4, 0.8)) -> list[Pose]:
    """Cameras on a smooth closed loop, each looking across the room."""
    poses = []
    for i in range(n):
        a = 2 * math.pi * i / n
        pos = np.array([radii[0] * math.cos(a), 0.15 * math.sin(2 * a), radii[1] * math.sin(a)])
        b = a + 0.6 * math.pi
        target = np.array([2.0 * math.cos(b), 0.25 * math.cos(a), 1.5 * math.sin(b)])
        poses.append(look_at(pos, target))
    return poses


def default_cameras(n: int, equirect_size=(32, 64), size=64) -> list[CameraSpec]:
    """Cycle equirect / pinhole / fisheye."""
    h, w = equirect_size
    c = (size - 1) / 2.0
    cycle = [
        EquirectCamera(w, h),
        PinholeCamera(size, size, size / 2.0, size / 2.0, c, c),  # 90 degree FoV
        FisheyeCamera(size, size, size / 3.2, c, c, theta_max=1.6),
    ]
    return [cycle[i % 3] for i in range(n)]


# -- pair curation -------------------------------------------------------------

@dataclass(frozen=True)
class PairProfile:
    d_min: float
    d_max: float
    angle_min: Optional[float] = None  # degrees, relative viewing angle
    angle_max: Optional[float] = None
    top_k: int = 5


PROFILES = {
    "2d3ds": PairProfile(0.1, 2.2),
    "360loc": PairProfile(1.5, 10.0),
    "adt": PairProfile(0.35, 1.75, 25.0, 65.0),
}


def viewing_angle(a: Pose, b: Pose) -> float:
    """Angle in degrees between two cameras' optical axes."""
    c = float(np.clip(a.R[:, 2] @ b.R[:, 2], -1.0, 1.0))
    return math.degrees(math.acos(c))


def curate_pairs(poses: Sequence[Pose], profile: Union[str, PairProfile] = "2d3ds",
                 top_k: Optional[int] = None) -> list[tuple[int, int]]:
    """Undirected pairs within the profile's baseline (and angle) window,
    truncated to the ``top_k`` closest valid neighbours per anchor."""
    prof = PROFILES[profile] if isinstance(profile, str) else profile
    k = prof.top_k if top_k is None else top_k
    centers = np.array([p.t for p in poses])
    pairs = set()
    for i in range(len(poses)):
        cand = []
        for j in range(len(poses)):
            if j == i:
                continue
            b = float(np.linalg.norm(centers[i] - centers[j]))
            if not prof.d_min <= b <= prof.d_max:
                continue
            if prof.angle_min is not None:
                ang = viewing_angle(poses[i], poses[j])
                if not prof.angle_min <= ang <= prof.angle_max:
                    continue
            cand.append((b, j))
        for _, j in sorted(cand)[:k]:
            pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


# -- edge synthesis --------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    radial_rel_sigma: float = 0.0
    rot_sigma_deg: float = 0.0
    trans_dir_sigma_deg: float = 0.0
    edge_scale_range: tuple = (1.0, 1.0)
    outlier_fraction: float = 0.0
    conf_k: float = 10.0
    min_outlier_angle_deg: float = 30.0

    def __post_init__(self):
        if min(self.radial_rel_sigma, self.rot_sigma_deg, self.trans_dir_sigma_deg) < 0:
            raise ValueError("noise sigmas must be non-negative")
        lo, hi = self.edge_scale_range
        if not 0 < lo <= hi:
            raise ValueError("edge_scale_range must satisfy 0 < lo <= hi")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must lie in [0, 1]")


def _random_axis(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _perturb_direction(t, angle, rng):
    n = np.linalg.norm(t)
    if n < 1e-12 or angle == 0:
        return t
    # rotate about an axis orthogonal to t so the deviation equals |angle|
    axis = np.cross(t / n, _random_axis(rng))
    while np.linalg.norm(axis) < 1e-6:
        axis = np.cross(t / n, _random_axis(rng))
    return axis_angle(axis, angle) @ t


def synthesize_edges(views: Sequence[View], gt_poses: Sequence[Pose], gt_radials: Sequence[RadialMap],
                     pairs: Sequence[tuple[int, int]], noise: NoiseModel,
                     seed: int) -> tuple[list[EdgeObservation], list[tuple[int, int]]]:
    """Both directed edges for every pair, plus the keys of corrupted edges.

    Exactly ``floor(outlier_fraction * len(pairs))`` pairs get one direction
    replaced by a random rotation at least ``min_outlier_angle_deg`` away
    from the truth and a random unit translation direction.
    """
    ids = [v.id for v in views]
    pos = {vid: k for k, vid in enumerate(ids)}
    n_out = int(math.floor(noise.outlier_fraction * len(pairs) + 1e-9))
    orng = np.random.default_rng([seed, 0x0F])
    chosen = orng.choice(len(pairs), size=n_out, replace=False) if n_out else []
    corrupt = {}
    for p in sorted(int(c) for c in chosen):
        corrupt[p] = int(orng.integers(2))

    edges, corrupted = [], []
    for p, (a, b) in enumerate(pairs):
        for direction, (src, dst) in enumerate(((a, b), (b, a))):
            rng = np.random.default_rng([seed, p, direction])
            lo, hi = noise.edge_scale_range
            scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
            rel = relative_from_c2w(gt_poses[pos[src]], gt_poses[pos[dst]])
            R = rel.R
            if noise.rot_sigma_deg > 0:
                R = axis_angle(_random_axis(rng), math.radians(rng.normal(0, noise.rot_sigma_deg))) @ R
            t = rel.t * scale
            if noise.trans_dir_sigma_deg > 0:
                t = _perturb_direction(t, math.radians(rng.normal(0, noise.trans_dir_sigma_deg)), rng)
            if corrupt.get(p) == direction:
                while True:
                    R_bad = random_rotation(rng)
                    if math.degrees(geodesic_angle(R_bad, rel.R)) >= noise.min_outlier_angle_deg:
                        break
                R = R_bad
                t = _random_axis(rng) * max(np.linalg.norm(t), 1e-3)
                corrupted.append((src, dst))
            maps = {}
            for role, vid in (("dst", dst), ("src", src)):
                r_gt = gt_radials[pos[vid]].r
                if noise.radial_rel_sigma > 0:
                    mult = np.exp(rng.normal(0.0, noise.radial_rel_sigma, size=r_gt.shape))
                else:
                    mult = np.ones_like(r_gt)
                r = np.where(r_gt > 0, r_gt * scale * mult, 0.0)
                conf = 1.0 / (1.0 + noise.conf_k * np.abs(mult - 1.0))
                maps[role] = (RadialMap(r), ConfidenceMap(np.where(r_gt > 0, conf, 0.0)))
            edges.append(EdgeObservation(
                src=src, dst=dst, pose=Pose(R, t),
                radial_dst=maps["dst"][0], radial_src=maps["src"][0],
                conf_dst=maps["dst"][1], conf_src=maps["src"][1],
                pair_scale=scale,
            ))
    return edges, corrupted


# -- whole scenario ------------------------------------------------------------------

@dataclass
class SimConfig:
    n_views: int = 8
    seed: int = 0
    profile: str = "2d3ds"
    top_k: Optional[int] = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    cameras: Optional[list] = None  # CameraSpec per view; default cycles the three models
    poses: Optional[list] = None  # camera-to-world Pose per view; default loop trajectory
    geometry: Optional[SceneGeometry] = None
    rogue_views: tuple = ()  # views rendered against disjoint geometry


@dataclass(eq=False)
class Simulation:
    graph: SceneGraph
    gt_poses: dict  # view id -> camera-to-world Pose
    gt_radials: dict  # view id -> RadialMap
    pairs: list
    corrupted: list
    geometry: SceneGeometry


def rogue_geometry(radius: float = 0.3) -> SceneGeometry:
    """A small closed sphere around the camera: geometry no other view sees."""
    return SceneGeometry((Sphere((0.0, 0.0, 0.0), radius),))


def simulate(cfg: SimConfig = SimConfig()) -> Simulation:
    geom = cfg.geometry or default_geometry()
    poses = cfg.poses or loop_trajectory(cfg.n_views)
    cams = cfg.cameras or default_cameras(cfg.n_views)
    if not (len(poses) == len(cams) == cfg.n_views):
        raise ValueError("n_views, poses and cameras disagree")
    views = [View.from_camera(i, c) for i, c in enumerate(cams)]
    radials = []
    for v, p in zip(views, poses):
        if v.id in cfg.rogue_views:
            _, r = render_pointmap(rogue_geometry(), Pose(p.R, np.zeros(3)), v.rays)
        else:
            _, r = render_pointmap(geom, p, v.rays)
        radials.append(r)
    pairs = curate_pairs(poses, cfg.profile, cfg.top_k)
    edges, corrupted = synthesize_edges(views, poses, radials, pairs, cfg.noise, cfg.seed)
    graph = SceneGraph({v.id: v for v in views}, edges, {"seed": cfg.seed, "profile": cfg.profile})
    return Simulation(graph, {v.id: p for v, p in zip(views, poses)},
                      {v.id: r for v, r in zip(views, radials)}, pairs, corrupted, geom)
