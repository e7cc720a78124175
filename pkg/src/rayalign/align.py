"""Ray-conditioned global alignment of pruned pairwise predictions.

Pipeline: consensus rays and radial fields per view -> anchor selection and
breadth-first initialization -> alternating first-order minimization of the
confidence-weighted correspondence error over poses, per-view log-scales and
per-pixel log-depths. Points only ever move along their frozen rays.

Correspondences come from the mutual-nearest-neighbour pairs cached by
:func:`rayalign.scenegraph.prune`. For a pair ``(p, q)`` on edge ``j -> i``
the residual is

    T_i(s_i x_i(p)) - T_j(s_j (x_j(q) + k_j * delta_e(p, q)))

where ``delta_e`` is the offset between the two matched samples as the edge
itself observes it (in frame ``j``) and ``k_j`` converts the edge's scale to
view ``j``'s consensus scale. The offset term removes the sampling gap between
two different pixel grids, so the residual vanishes at the ground truth.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cameras import RayField
from .errors import Disconnected, EmptyGraph, IsolatedView, NonFiniteObjective, NoValidPixels
from .geometry import Pose, exp_so3
from .pointmap import ConfidenceMap, Pointmap, RadialMap
from .scenegraph import SceneGraph, components

log = logging.getLogger(__name__)


# -- consensus -------------------------------------------------------------

def _incident(graph: SceneGraph):
    """view id -> list of (edge index, role) in edge order."""
    out = {v: [] for v in graph.views}
    for n, e in enumerate(graph.edges):
        out[e.dst].append((n, "dst"))
        out[e.src].append((n, "src"))
    return out


def _role_maps(graph: SceneGraph, n: int, role: str):
    e = graph.edges[n]
    if role == "dst":
        return graph.rays_for(e, "dst"), e.radial_dst.r, e.conf_dst.sigma
    return graph.rays_for(e, "src"), e.radial_src.r, e.conf_src.sigma


def consensus_rays(graph: SceneGraph, eps: float = 1e-9) -> dict[int, RayField]:
    """Confidence-weighted mean of all incident ray predictions, renormalized."""
    out = {}
    for v, inc in _incident(graph).items():
        if not inc:
            raise IsolatedView(f"view {v} has no incident edges")
        acc = np.zeros(graph.views[v].rays.dirs.shape)
        for n, role in inc:
            rays, _, sigma = _role_maps(graph, n, role)
            acc += np.where(rays.valid, sigma, 0.0)[..., None] * rays.dirs
        norm = np.linalg.norm(acc, axis=-1)
        valid = norm > eps
        d = np.where(valid[..., None], acc / np.where(valid, norm, 1.0)[..., None], 0.0)
        out[v] = RayField(d, valid)
    return out


@dataclass(eq=False)
class ConsensusFields:
    rays: dict  # view id -> RayField
    radial: dict  # view id -> RadialMap
    conf: dict  # view id -> ConfidenceMap
    scale_factors: dict  # (edge index, role) -> k, maps edge scale onto the view's consensus scale


def init_radial(graph: SceneGraph, rays: dict[int, RayField]) -> ConsensusFields:
    """Fuse per-edge radial predictions into one field per view.

    Each prediction is first projected onto the consensus ray, then brought to
    the scale of the view's first incident prediction by the median of the
    per-pixel ratios, and finally averaged with confidence weights.
    """
    radial, conf, k = {}, {}, {}
    for v, inc in _incident(graph).items():
        if not inc:
            raise IsolatedView(f"view {v} has no incident edges")
        D = rays[v]
        ref = None
        num = np.zeros(D.shape)
        den = np.zeros(D.shape)
        for n, role in inc:
            er, r, sigma = _role_maps(graph, n, role)
            r_al = np.where(er.valid & D.valid & (r > 0), r * np.sum(er.dirs * D.dirs, axis=-1), 0.0)
            r_al = np.where(r_al > 0, r_al, 0.0)
            if ref is None:
                if not np.any(r_al > 0):
                    raise NoValidPixels(f"view {v}: reference prediction has no valid pixels")
                ref = r_al
                kk = 1.0
            else:
                m = (ref > 0) & (r_al > 0)
                if not m.any():
                    raise NoValidPixels(f"view {v}: edge {graph.edges[n].key} shares no valid pixels")
                kk = float(np.median(ref[m] / r_al[m]))
            k[(n, role)] = kk
            w = np.where(r_al > 0, sigma, 0.0)
            num += w * kk * r_al
            den += w
        ok = den > 0
        radial[v] = RadialMap(np.where(ok, num / np.where(ok, den, 1.0), 0.0))
        conf[v] = ConfidenceMap(np.where(ok, den / len(inc), 0.0))
    return ConsensusFields(rays, radial, conf, k)


# -- initialization ------------------------------------------------------------

def select_anchor(graph: SceneGraph) -> int:
    """Highest-degree view (undirected neighbour count); ties -> smallest id."""
    if not graph.views:
        raise EmptyGraph("graph has no views")
    nb = graph.neighbors()
    return min(graph.views, key=lambda v: (-len(nb[v]), v))


def _bfs_tree(graph: SceneGraph, anchor: int):
    """Yield (parent, child) in BFS order, neighbours visited by ascending id."""
    nb = graph.neighbors()
    seen = {anchor}
    queue = deque([anchor])
    order = []
    while queue:
        p = queue.popleft()
        for c in nb[p]:
            if c not in seen:
                seen.add(c)
                order.append((p, c))
                queue.append(c)
    if len(seen) != len(graph.views):
        raise Disconnected(f"views {sorted(set(graph.views) - seen)} are not reachable from anchor {anchor}")
    return order


def _tree_edge(graph: SceneGraph, emap, parent: int, child: int):
    """Relative pose child -> parent, plus the (edge index, role) of each endpoint."""
    if (child, parent) in emap:
        n = emap[(child, parent)]
        return graph.edges[n].pose, (n, "dst"), (n, "src")
    n = emap[(parent, child)]
    return graph.edges[n].pose.inverse(), (n, "src"), (n, "dst")


def init_log_scales(graph: SceneGraph, anchor: int, scale_factors: dict) -> dict[int, float]:
    """Propagate consensus scale ratios from the anchor (log-scale 0) along the BFS tree."""
    emap = {e.key: n for n, e in enumerate(graph.edges)}
    ls = {anchor: 0.0}
    for p, c in _bfs_tree(graph, anchor):
        _, kp, kc = _tree_edge(graph, emap, p, c)
        ls[c] = ls[p] + math.log(scale_factors[kp]) - math.log(scale_factors[kc])
    return ls


def init_poses(graph: SceneGraph, anchor: int, scale_factors: Optional[dict] = None,
               log_scales: Optional[dict] = None) -> dict[int, Pose]:
    """Camera-to-anchor poses by composing edge poses along a BFS tree.

    Without ``scale_factors``/``log_scales`` the edge translations are chained
    as predicted (each at its own pair scale). With them, every tree edge's
    translation is first converted to the parent's world scale, which gives
    exact poses up to a global similarity on noiseless input.
    """
    emap = {e.key: n for n, e in enumerate(graph.edges)}
    poses = {anchor: Pose.identity()}
    for p, c in _bfs_tree(graph, anchor):
        rel, kp, _ = _tree_edge(graph, emap, p, c)
        t = rel.t
        if scale_factors is not None and log_scales is not None:
            t = t * scale_factors[kp] * math.exp(log_scales[p])
        parent = poses[p]
        poses[c] = Pose(parent.R @ rel.R, parent.R @ t + parent.t)
    return poses


# -- optimization problem ---------------------------------------------------------

@dataclass(frozen=True)
class AlignConfig:
    lr_init: float = 1e-2
    iters_per_stage: int = 100
    cycles: int = 3
    joint_iters: int = 300
    lr_floor: float = 1e-6  # cosine floor, 1e-4 * lr_init by default
    tol: float = 1e-8  # relative objective decrease over `patience` iterations
    patience: int = 10
    depth_prior: float = 1e-3
    optimize_depth: bool = True
    use_confidence: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    seed: int = 0

    def __post_init__(self):
        if self.lr_init <= 0 or not 0 < self.lr_floor < self.lr_init:
            raise ValueError("need 0 < lr_floor < lr_init")
        if min(self.iters_per_stage, self.joint_iters) < 0 or self.cycles < 0:
            raise ValueError("iteration counts must be non-negative")


@dataclass(eq=False)
class Problem:
    """Frozen data of the alignment: consensus fields and correspondences."""

    ids: list  # view ids, index order of the state arrays
    anchor: int  # index into ids
    rays: list  # per view (P_v, 3) unit rays of valid pixels
    pix: list  # per view flat pixel index of each valid pixel
    shapes: list
    ld_init: list  # per view (P_v,) log radial
    conf: list  # per view (P_v,) fused confidence
    # correspondences: concatenated over edges
    vi: np.ndarray
    vj: np.ndarray
    pi: np.ndarray  # index into view vi's valid-pixel arrays
    pj: np.ndarray
    delta: np.ndarray  # (K, 3) offset in frame j, view-j consensus units
    w: np.ndarray
    depth_prior: float = 1e-3


@dataclass(eq=False)
class AlignmentState:
    R: np.ndarray  # (N, 3, 3) camera-to-world rotations
    t: np.ndarray  # (N, 3)
    log_scale: np.ndarray  # (N,)
    log_depth: list  # per view (P_v,)

    def copy(self) -> "AlignmentState":
        return AlignmentState(self.R.copy(), self.t.copy(), self.log_scale.copy(),
                              [a.copy() for a in self.log_depth])


def build_problem(graph: SceneGraph, fields: ConsensusFields, anchor: int,
                  use_confidence: bool = True, depth_prior: float = 1e-3) -> Problem:
    ids = list(graph.views)
    index = {v: n for n, v in enumerate(ids)}
    rays, pix, shapes, ld0, conf, lookup = [], [], [], [], [], []
    for v in ids:
        D, Rm = fields.rays[v], fields.radial[v].r
        valid = D.valid & (Rm > 0)
        flat = np.flatnonzero(valid)
        rays.append(D.dirs.reshape(-1, 3)[flat])
        pix.append(flat)
        shapes.append(D.shape)
        ld0.append(np.log(Rm.reshape(-1)[flat]))
        conf.append(fields.conf[v].sigma.reshape(-1)[flat])
        lut = np.full(valid.size, -1, dtype=np.int64)
        lut[flat] = np.arange(len(flat))
        lookup.append(lut)

    VI, VJ, PI, PJ, DL, W = [], [], [], [], [], []
    for n, e in enumerate(graph.edges):
        if e.matches is None or len(e.matches) == 0:
            continue
        i, j = index[e.dst], index[e.src]
        p, q = e.matches[:, 0], e.matches[:, 1]
        li, lj = lookup[i][p], lookup[j][q]
        ok = (li >= 0) & (lj >= 0)
        p, q, li, lj = p[ok], q[ok], li[ok], lj[ok]
        A = graph.rays_for(e, "dst").dirs.reshape(-1, 3)[p] * e.radial_dst.r.reshape(-1)[p][:, None]
        Zq = graph.rays_for(e, "src").dirs.reshape(-1, 3)[q] * e.radial_src.r.reshape(-1)[q][:, None]
        B = Zq @ e.pose.R.T + e.pose.t
        delta = (A - B) @ e.pose.R * fields.scale_factors[(n, "src")]
        if use_confidence:
            w = np.sqrt(e.conf_dst.sigma.reshape(-1)[p] * e.conf_src.sigma.reshape(-1)[q])
        else:
            w = np.ones(len(p))
        VI.append(np.full(len(p), i))
        VJ.append(np.full(len(p), j))
        PI.append(li)
        PJ.append(lj)
        DL.append(delta)
        W.append(w)
    if not VI:
        raise NoValidPixels("no cached correspondences; run prune first")
    cat = np.concatenate
    return Problem(ids, index[anchor], rays, pix, shapes, ld0, conf,
                   cat(VI), cat(VJ), cat(PI), cat(PJ), cat(DL), cat(W), depth_prior)


def initial_state(problem: Problem, poses: dict, log_scales: dict) -> AlignmentState:
    R = np.stack([poses[v].R for v in problem.ids])
    t = np.stack([poses[v].t for v in problem.ids])
    ls = np.array([log_scales.get(v, 0.0) for v in problem.ids], dtype=float)
    return AlignmentState(R, t, ls, [a.copy() for a in problem.ld_init])


def _flat_ld(problem: Problem, state: AlignmentState):
    offsets = np.cumsum([0] + [len(a) for a in problem.ld_init])
    return offsets, np.concatenate(state.log_depth)


def objective(state: AlignmentState, problem: Problem, with_grad: bool = True):
    """Weighted correspondence error plus the log-depth prior.

    Returns ``(value, grads)`` where ``grads`` holds ``rot`` (N, 3) tangent
    gradients for the left perturbation ``R <- exp([w]x) R``, ``t`` (N, 3),
    ``log_scale`` (N,) and ``log_depth`` (list of per-view arrays).
    Overflow shows up as a non-finite value, which the caller checks.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _objective(state, problem, with_grad)


def _objective(state, problem, with_grad):
    off, ld = _flat_ld(problem, state)
    vi, vj = problem.vi, problem.vj
    gi, gj = off[vi] + problem.pi, off[vj] + problem.pj
    rays = np.concatenate(problem.rays)
    Di, Dj = rays[gi], rays[gj]
    sj = np.exp(state.log_scale[vj])
    a_i = np.exp(ld[gi] + state.log_scale[vi])[:, None] * Di
    pt_j = np.exp(ld[gj] + state.log_scale[vj])[:, None] * Dj
    b_j = pt_j + sj[:, None] * problem.delta
    Ri, Rj = state.R[vi], state.R[vj]
    Ra = np.einsum("kab,kb->ka", Ri, a_i)
    Rb = np.einsum("kab,kb->ka", Rj, b_j)
    res = Ra + state.t[vi] - Rb - state.t[vj]
    w = problem.w
    ld0 = np.concatenate(problem.ld_init)
    dld = ld - ld0
    # exact summation: terms untouched by a perturbation cancel bit-for-bit
    value = math.fsum(w * np.sum(res * res, axis=1)) + math.fsum(problem.depth_prior * dld * dld)
    if not with_grad:
        return value, None

    N = len(problem.ids)
    g = 2.0 * w[:, None] * res  # d value / d res
    grad_t = np.zeros((N, 3))
    grad_r = np.zeros((N, 3))
    for c in range(3):
        grad_t[:, c] = np.bincount(vi, g[:, c], N) - np.bincount(vj, g[:, c], N)
    cr_i = np.cross(Ra, g)
    cr_j = np.cross(Rb, g)
    for c in range(3):
        grad_r[:, c] = np.bincount(vi, cr_i[:, c], N) - np.bincount(vj, cr_j[:, c], N)
    gs_i = np.sum(g * Ra, axis=1)  # d/d log_scale_i and d/d log_depth_i(p)
    gs_j = -np.sum(g * Rb, axis=1)
    grad_ls = np.bincount(vi, gs_i, N) + np.bincount(vj, gs_j, N)
    gd_j = -np.sum(g * np.einsum("kab,kb->ka", Rj, pt_j), axis=1)
    total = len(ld)
    grad_ld = (np.bincount(gi, gs_i, total) + np.bincount(gj, gd_j, total)
               + 2.0 * problem.depth_prior * dld)
    grads = {
        "rot": grad_r,
        "t": grad_t,
        "log_scale": grad_ls,
        "log_depth": [grad_ld[off[n]:off[n + 1]] for n in range(N)],
    }
    return value, grads


def effective_points(state: AlignmentState, problem: Problem, view: int, world: bool = False) -> Pointmap:
    """Dense pointmap ``exp(log_depth + log_scale) * ray`` of one view.

    Local camera frame by default; ``world=True`` applies the view's pose.
    """
    n = problem.ids.index(view)
    H, W = problem.shapes[n]
    xyz = np.zeros((H * W, 3))
    valid = np.zeros(H * W, dtype=bool)
    pts = np.exp(state.log_depth[n] + state.log_scale[n])[:, None] * problem.rays[n]
    if world:
        pts = pts @ state.R[n].T + state.t[n]
    xyz[problem.pix[n]] = pts
    valid[problem.pix[n]] = True
    return Pointmap(xyz.reshape(H, W, 3), valid.reshape(H, W))


# -- optimizer ---------------------------------------------------------------------

class _Adam:
    """Adam over named variable blocks, no weight decay.

    Moments persist across stages; each block keeps its own step count so the
    bias correction restarts only for blocks that were never updated.
    """

    def __init__(self, beta1, beta2, eps):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m, self.v, self.k = {}, {}, {}

    def step(self, grads: dict, lr: float) -> dict:
        out = {}
        for name, g in grads.items():
            k = self.k.get(name, 0) + 1
            m = self.m.get(name, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(name, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[name], self.v[name], self.k[name] = m, v, k
            mh = m / (1 - self.b1**k)
            vh = v / (1 - self.b2**k)
            out[name] = lr * mh / (np.sqrt(vh) + self.eps)
        return out


def cosine_lr(it: int, total: int, lr0: float, floor: float) -> float:
    if total <= 1:
        return lr0
    return floor + 0.5 * (lr0 - floor) * (1.0 + math.cos(math.pi * it / (total - 1)))


@dataclass(eq=False)
class AlignmentResult:
    ids: list
    anchor: int  # view id
    poses: dict  # view id -> camera-to-world Pose
    log_scales: dict
    trace: list  # objective value per evaluation
    stages: list  # (name, first trace index, objective at stage end)
    state: AlignmentState
    problem: Problem
    fields: ConsensusFields
    init_poses: dict

    @property
    def scales(self) -> dict:
        return {v: math.exp(s) for v, s in self.log_scales.items()}

    def fused_cloud(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points, confidences and source view id of every valid pixel."""
        pts, conf, src = [], [], []
        for n, v in enumerate(self.ids):
            pm = effective_points(self.state, self.problem, v, world=True)
            pts.append(pm.xyz.reshape(-1, 3)[self.problem.pix[n]])
            conf.append(self.problem.conf[n])
            src.append(np.full(len(self.problem.pix[n]), v))
        return np.concatenate(pts), np.concatenate(conf), np.concatenate(src)


def _run_stage(name, state, problem, cfg, iters, blocks, trace, opt):
    """Adam with a cosine schedule on the selected variable blocks.

    Keeps the best iterate, so the objective at the end of a stage never
    exceeds its value at the start.
    """
    anchor = problem.anchor
    value, grads = objective(state, problem)
    best_val, best = value, state.copy()
    history = [value]
    for it in range(iters):
        if not math.isfinite(value):
            raise NonFiniteObjective(f"objective became {value} in stage {name} at iteration {it}")
        g = {}
        if "pose" in blocks:
            gr, gt = grads["rot"].copy(), grads["t"].copy()
            gr[anchor] = 0.0
            gt[anchor] = 0.0
            g["rot"], g["t"] = gr, gt
        if "scale" in blocks:
            gs = grads["log_scale"].copy()
            gs[anchor] = 0.0
            g["log_scale"] = gs
        if "depth" in blocks:
            g["log_depth"] = np.concatenate(grads["log_depth"])
        lr = cosine_lr(it, iters, cfg.lr_init, cfg.lr_floor)
        step = opt.step(g, lr)
        if "rot" in step:
            for n in range(len(problem.ids)):
                if n != anchor:
                    state.R[n] = exp_so3(-step["rot"][n]) @ state.R[n]
            state.t -= step["t"]
        if "log_scale" in step:
            state.log_scale -= step["log_scale"]
        if "log_depth" in step:
            off, _ = _flat_ld(problem, state)
            for n in range(len(problem.ids)):
                state.log_depth[n] -= step["log_depth"][off[n]:off[n + 1]]
        value, grads = objective(state, problem)
        trace.append(value)
        if value < best_val:
            best_val, best = value, state.copy()
        history.append(value)
        if len(history) > cfg.patience:
            # flat objective; an oscillating one is not converged
            old = history[-1 - cfg.patience]
            if abs(old - value) <= cfg.tol * old:
                break
    if not math.isfinite(best_val):
        raise NonFiniteObjective(f"objective non-finite in stage {name}")
    log.debug("stage %s: %d iters, objective %.6e", name, len(history) - 1, best_val)
    return best, best_val


def optimize(graph: SceneGraph, cfg: AlignConfig = AlignConfig(),
             anchor: Optional[int] = None) -> AlignmentResult:
    """Consensus, initialization and alternating optimization on a pruned graph.

    Stage A moves poses, stage B log-scales (and log-depths when enabled);
    the pair is repeated ``cycles`` times before a joint stage over all
    variables. The anchor's pose and log-scale stay pinned.
    """
    comps = components(graph.view_ids, [e.key for e in graph.edges])
    if len(comps) > 1:
        raise Disconnected(f"graph has {len(comps)} components: {comps}")
    rays = consensus_rays(graph)
    fields = init_radial(graph, rays)
    anchor = select_anchor(graph) if anchor is None else anchor
    log_scales = init_log_scales(graph, anchor, fields.scale_factors)
    poses0 = init_poses(graph, anchor)
    problem = build_problem(graph, fields, anchor, cfg.use_confidence, cfg.depth_prior)
    state = initial_state(problem, poses0, log_scales)

    trace = [objective(state, problem, with_grad=False)[0]]
    stages = []
    depth = {"depth"} if cfg.optimize_depth else set()
    plan = []
    for c in range(cfg.cycles):
        plan.append((f"poses[{c}]", cfg.iters_per_stage, {"pose"}))
        plan.append((f"scales[{c}]", cfg.iters_per_stage, {"scale"} | depth))
    plan.append(("joint", cfg.joint_iters, {"pose", "scale"} | depth))
    opt = _Adam(cfg.beta1, cfg.beta2, cfg.eps)
    for name, iters, blocks in plan:
        start = len(trace)
        state, val = _run_stage(name, state, problem, cfg, iters, blocks, trace, opt)
        stages.append((name, start, val))

    ids = problem.ids
    poses = {v: Pose(state.R[n], state.t[n]) for n, v in enumerate(ids)}
    ls = {v: float(state.log_scale[n]) for n, v in enumerate(ids)}
    return AlignmentResult(ids, anchor, poses, ls, trace, stages, state, problem, fields, poses0)
