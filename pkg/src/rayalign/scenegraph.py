"""Directed pairwise predictions and the three-stage pruning cascade.

An edge ``src -> dst`` carries the relative pose mapping points of the
``src`` camera frame into the ``dst`` frame, plus the pair's radial and
confidence predictions for both views (at the pair's own, unknown scale).
"""
from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cameras import CameraSpec, RayField, ray_field
from .errors import EmptyPointmap, NotReciprocal
from .geometry import Pose, direction_angle, geodesic_angle
from .pointmap import ConfidenceMap, Pointmap, RadialMap, make_pointmap, transform_pointmap

KEPT = "kept"
FAILED_ROT = "failed_symmetry_rot"
FAILED_TRANS = "failed_symmetry_trans"
FAILED_OVERLAP = "failed_overlap"
DROPPED_PARTNER = "dropped_by_symmetric_partner"
OUTSIDE_COMPONENT = "outside_largest_component"


def n_workers() -> int:
    """Thread cap for spatial queries, from ``RAYALIGN_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("RAYALIGN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class View:
    id: int
    camera: CameraSpec
    rays: RayField

    @classmethod
    def from_camera(cls, view_id: int, camera: CameraSpec) -> "View":
        return cls(int(view_id), camera, ray_field(camera))


@dataclass(frozen=True, eq=False)
class EdgeObservation:
    src: int
    dst: int
    pose: Pose  # maps src-frame points into the dst frame
    radial_dst: RadialMap
    radial_src: RadialMap
    conf_dst: ConfidenceMap
    conf_src: ConfidenceMap
    pair_scale: Optional[float] = None  # simulator diagnostics only
    rays_dst: Optional[RayField] = None  # per-edge ray predictions; None -> the view's field
    rays_src: Optional[RayField] = None
    matches: Optional[np.ndarray] = None  # (K, 2) flat pixel indices (dst, src), cached by prune

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.dst)


@dataclass(eq=False)
class SceneGraph:
    views: dict[int, View]
    edges: list[EdgeObservation]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.views = {int(k): self.views[k] for k in sorted(self.views)}
        for e in self.edges:
            if e.src == e.dst:
                raise ValueError(f"self-edge on view {e.src}")
            for vid, radial in ((e.src, e.radial_src), (e.dst, e.radial_dst)):
                if vid not in self.views:
                    raise KeyError(f"edge {e.key} references unknown view {vid}")
                if radial.shape != self.views[vid].rays.shape:
                    raise ValueError(f"edge {e.key}: radial shape {radial.shape} does not match view {vid}")

    @property
    def view_ids(self) -> list[int]:
        return list(self.views)

    def edge_map(self) -> dict[tuple[int, int], EdgeObservation]:
        return {e.key: e for e in self.edges}

    def neighbors(self) -> dict[int, list[int]]:
        nb = {v: set() for v in self.views}
        for e in self.edges:
            nb[e.src].add(e.dst)
            nb[e.dst].add(e.src)
        return {v: sorted(s) for v, s in nb.items()}

    def rays_for(self, e: EdgeObservation, role: str) -> RayField:
        if role == "dst":
            return e.rays_dst if e.rays_dst is not None else self.views[e.dst].rays
        return e.rays_src if e.rays_src is not None else self.views[e.src].rays

    def edge_pointmaps(self, e: EdgeObservation) -> tuple[Pointmap, Pointmap]:
        """Both views' points under edge ``e``, expressed in the dst frame."""
        a = make_pointmap(self.rays_for(e, "dst"), e.radial_dst)
        b = transform_pointmap(make_pointmap(self.rays_for(e, "src"), e.radial_src), e.pose)
        return a, b

    def subgraph(self, view_ids, edges) -> "SceneGraph":
        keep = set(view_ids)
        return SceneGraph({v: self.views[v] for v in self.views if v in keep}, list(edges), dict(self.meta))


# -- stage 1: symmetric pose consistency -------------------------------------

def symmetric_pose_check(e_ij: EdgeObservation, e_ji: EdgeObservation,
                         tau_rot: float = 5.0, tau_tra: float = 10.0) -> tuple[float, float, bool]:
    """Forward-backward residuals in degrees and the pass flag.

    The translation test is skipped (rotation decides alone) when either
    translation is shorter than 1e-9; ``theta_tra`` is then reported as 0.
    """
    if (e_ij.src, e_ij.dst) != (e_ji.dst, e_ji.src):
        raise NotReciprocal(f"edges {e_ij.key} and {e_ji.key} are not reciprocal")
    R_ij, t_ij = e_ij.pose.R, e_ij.pose.t
    R_ji, t_ji = e_ji.pose.R, e_ji.pose.t
    theta_rot = math.degrees(geodesic_angle(np.eye(3), R_ji @ R_ij))
    t_exp = -R_ij.T @ t_ij
    if np.linalg.norm(t_ij) < 1e-9 or np.linalg.norm(t_ji) < 1e-9:
        theta_tra = 0.0
    else:
        theta_tra = math.degrees(direction_angle(t_ji, t_exp))
    return theta_rot, theta_tra, bool(theta_rot <= tau_rot and theta_tra <= tau_tra)


# -- stage 2: geometric overlap ----------------------------------------------

@dataclass(frozen=True, eq=False)
class Matches:
    idx_a: np.ndarray  # flat pixel indices into a
    idx_b: np.ndarray  # flat pixel indices into b
    dist: np.ndarray

    def __len__(self):
        return len(self.idx_a)


def stride_mask(shape, stride: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[::stride, ::stride] = True
    return m


def mnn_matches(a: Pointmap, b: Pointmap, stride: int = 1, max_dist: Optional[float] = None,
                workers: Optional[int] = None) -> Matches:
    """Mutual nearest neighbours between the valid points of two pointmaps.

    Only pixels on the ``stride`` sub-grid take part. Indices refer to the
    full-resolution flattened pixel grids.
    """
    ma = a.valid & stride_mask(a.shape, stride)
    mb = b.valid & stride_mask(b.shape, stride)
    ia, ib = np.flatnonzero(ma), np.flatnonzero(mb)
    if len(ia) == 0 or len(ib) == 0:
        raise EmptyPointmap("both pointmaps need at least one valid point")
    pa = a.xyz.reshape(-1, 3)[ia]
    pb = b.xyz.reshape(-1, 3)[ib]
    w = workers or n_workers()
    d_ab, nn_ab = cKDTree(pb).query(pa, k=1, workers=w)
    _, nn_ba = cKDTree(pa).query(pb, k=1, workers=w)
    mutual = nn_ba[nn_ab] == np.arange(len(pa))
    if max_dist is not None:
        mutual &= d_ab <= max_dist
    sel = np.flatnonzero(mutual)
    return Matches(ia[sel], ib[nn_ab[sel]], d_ab[sel])


def nearest_rank_quantile(values, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return 0.0
    rank = max(1, math.ceil(q * len(v) - 1e-9))
    return float(v[min(rank, len(v)) - 1])


def overlap_gate(match_counts: dict, pixel_counts: Optional[dict] = None, quantile: float = 0.2,
                 absolute: bool = False, floor_fraction: float = 0.2,
                 threshold: Optional[float] = None) -> tuple[dict, dict, float]:
    """Adaptive match-count gate with symmetric enforcement.

    ``match_counts`` maps ``(src, dst)`` to ``n_e``. Returns
    ``(own_pass, final_pass, threshold)``: ``own_pass`` is each edge's verdict
    before symmetry enforcement. A pre-computed ``threshold`` overrides the
    quantile (used when re-pruning an already pruned graph).
    """
    if threshold is None:
        threshold = nearest_rank_quantile(list(match_counts.values()), quantile)
    own = {}
    for key, n in match_counts.items():
        t = threshold
        if absolute and pixel_counts is not None:
            t = max(t, floor_fraction * pixel_counts[key])
        own[key] = n >= t
    final = {key: ok and own.get((key[1], key[0]), True) for key, ok in own.items()}
    return own, final, float(threshold)


# -- stage 3: largest connected component ------------------------------------

def components(view_ids, edges) -> list[list[int]]:
    nb = {v: [] for v in view_ids}
    for s, d in edges:
        nb[s].append(d)
        nb[d].append(s)
    seen, out = set(), []
    for v in sorted(nb):
        if v in seen:
            continue
        comp, queue = [], deque([v])
        seen.add(v)
        while queue:
            x = queue.popleft()
            comp.append(x)
            for y in sorted(nb[x]):
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        out.append(sorted(comp))
    return out


def largest_component(view_ids, edges) -> set[int]:
    """Largest component of the undirected edge support; ties -> smallest minimum id."""
    comps = components(view_ids, edges)
    if not comps:
        return set()
    return set(min(comps, key=lambda c: (-len(c), c[0])))


# -- cascade -----------------------------------------------------------------

@dataclass(frozen=True)
class PruneConfig:
    tau_rot: float = 5.0  # degrees
    tau_tra: float = 10.0  # degrees
    quantile: float = 0.2
    absolute_floor: bool = False
    floor_fraction: float = 0.2
    stride: int = 4
    max_dist: Optional[float] = None


@dataclass(eq=False)
class PruneReport:
    edges: list[tuple[int, int]]
    verdicts: list[str]
    theta_rot: list[Optional[float]]
    theta_tra: list[Optional[float]]
    match_counts: list[Optional[int]]
    overlap_threshold: Optional[float]
    kept_views: list[int]
    config: PruneConfig

    def to_json(self) -> dict:
        return {
            "edges": [
                {"src": s, "dst": d, "verdict": v, "theta_rot_deg": r, "theta_tra_deg": t, "n_matches": n}
                for (s, d), v, r, t, n in zip(self.edges, self.verdicts, self.theta_rot, self.theta_tra,
                                              self.match_counts)
            ],
            "overlap_threshold": self.overlap_threshold,
            "kept_views": self.kept_views,
            "thresholds": {
                "tau_rot_deg": self.config.tau_rot, "tau_tra_deg": self.config.tau_tra,
                "quantile": self.config.quantile, "absolute_floor": self.config.absolute_floor,
                "floor_fraction": self.config.floor_fraction, "stride": self.config.stride,
                "max_dist": self.config.max_dist,
            },
        }


def prune(graph: SceneGraph, cfg: PruneConfig = PruneConfig()) -> tuple[SceneGraph, PruneReport]:
    """Symmetric pose check -> MNN overlap gate -> largest component.

    The overlap threshold is computed once from the scene-wide match-count
    distribution and stored in the pruned graph's ``meta``; pruning that graph
    again reuses it, which makes the cascade idempotent.
    """
    emap = graph.edge_map()
    keys = [e.key for e in graph.edges]
    verdict = {k: None for k in keys}
    th_rot: dict = {k: None for k in keys}
    th_tra: dict = {k: None for k in keys}

    for s, d in keys:
        if (d, s) not in emap:
            raise NotReciprocal(f"edge {(s, d)} has no reciprocal edge")
        if s > d:
            continue
        r, t, ok = symmetric_pose_check(emap[(s, d)], emap[(d, s)], cfg.tau_rot, cfg.tau_tra)
        for k in ((s, d), (d, s)):
            th_rot[k], th_tra[k] = r, t
            if not ok:
                verdict[k] = FAILED_ROT if r > cfg.tau_rot else FAILED_TRANS

    survivors = [k for k in keys if verdict[k] is None]
    counts, pixels, cached = {}, {}, {}
    for k in survivors:
        a, b = graph.edge_pointmaps(emap[k])
        m = mnn_matches(a, b, stride=cfg.stride, max_dist=cfg.max_dist)
        counts[k] = len(m)
        sub = stride_mask(a.shape, cfg.stride), stride_mask(b.shape, cfg.stride)
        pixels[k] = int(min((a.valid & sub[0]).sum(), (b.valid & sub[1]).sum()))
        cached[k] = np.stack([m.idx_a, m.idx_b], axis=1).astype(np.int64)

    threshold = None
    if counts:
        own, final, threshold = overlap_gate(counts, pixels, cfg.quantile, cfg.absolute_floor,
                                             cfg.floor_fraction, graph.meta.get("overlap_threshold"))
        for k in survivors:
            if not own[k]:
                verdict[k] = FAILED_OVERLAP
            elif not final[k]:
                verdict[k] = DROPPED_PARTNER

    passing = [k for k in keys if verdict[k] is None]
    comp = largest_component(graph.view_ids, passing)
    for k in passing:
        verdict[k] = KEPT if (k[0] in comp and k[1] in comp) else OUTSIDE_COMPONENT

    kept_edges = [replace(emap[k], matches=cached[k]) for k in keys if verdict[k] == KEPT]
    pruned = graph.subgraph(sorted(comp), kept_edges)
    if threshold is not None:
        pruned.meta["overlap_threshold"] = threshold
    report = PruneReport(keys, [verdict[k] for k in keys], [th_rot[k] for k in keys],
                         [th_tra[k] for k in keys], [counts.get(k) for k in keys], threshold,
                         sorted(comp), cfg)
    return pruned, report
