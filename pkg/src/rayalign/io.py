"""On-disk formats: CAMT tensors, scene/GT JSON documents and PLY clouds.

All writers are deterministic: JSON with sorted keys and a trailing newline,
tensors as little-endian float32, no timestamps. See ``docs/formats.md``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .cameras import RayField, camera_from_json, camera_to_json
from .geometry import Pose
from .pointmap import ConfidenceMap, RadialMap
from .scenegraph import EdgeObservation, SceneGraph, View

CAMT_MAGIC = b"CAMT"
CAMT_VERSION = 1
SCENE_VERSION = 1


class FormatError(ValueError):
    """Malformed file contents. ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: Optional[int] = None):
        super().__init__(msg)
        self.line = line


# -- CAMT --------------------------------------------------------------------------

def encode_camt(arr) -> bytes:
    a = np.asarray(arr)
    if a.ndim > 255:
        raise FormatError("rank exceeds 255")
    a = a.astype("<f4")
    if not np.all(np.isfinite(a)):
        raise FormatError("CAMT tensors must be finite")
    head = CAMT_MAGIC + struct.pack("<HBB", CAMT_VERSION, 0, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def decode_camt(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != CAMT_MAGIC:
        raise FormatError("not a CAMT tensor (bad magic)")
    version, dtype, rank = struct.unpack_from("<HBB", buf, 4)
    if version != CAMT_VERSION:
        raise FormatError(f"unsupported CAMT version {version}")
    if dtype != 0:
        raise FormatError(f"unsupported CAMT dtype {dtype}")
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated CAMT header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != 4 * n:
        raise FormatError(f"CAMT payload is {len(buf) - off} bytes, expected {4 * n}")
    a = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
    if not np.all(np.isfinite(a)):
        raise FormatError("CAMT payload holds non-finite values")
    return a.astype(np.float32)


def write_camt(path, arr) -> None:
    Path(path).write_bytes(encode_camt(arr))


def read_camt(path) -> np.ndarray:
    return decode_camt(Path(path).read_bytes())


# -- JSON helpers -------------------------------------------------------------------

def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


class _Obj(dict):
    line = 1


class _Arr(list):
    line = 1


def loads_located(text: str):
    """``json.loads`` whose objects and arrays remember their starting line.

    Uses the pure-Python scanner of the standard library with wrapped object
    and array parsers; errors become :class:`FormatError` with a line.
    """
    dec = json.JSONDecoder(object_pairs_hook=_Obj)

    def parse_object(s_and_end, *args):
        s, end = s_and_end
        obj, new_end = json.decoder.JSONObject(s_and_end, *args)
        if not isinstance(obj, _Obj):  # empty object bypasses the hook
            obj = _Obj(obj)
        obj.line = s.count("\n", 0, end) + 1
        return obj, new_end

    def parse_array(s_and_end, scan_once):
        s, end = s_and_end
        values, new_end = json.decoder.JSONArray(s_and_end, scan_once)
        arr = _Arr(values)
        arr.line = s.count("\n", 0, end) + 1
        return arr, new_end

    dec.parse_object = parse_object
    dec.parse_array = parse_array
    dec.scan_once = json.scanner.py_make_scanner(dec)
    try:
        return dec.decode(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, exc.lineno) from None


def line_of(node, default: int = 1) -> int:
    return getattr(node, "line", default)


def _field(obj, key, where):
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object", line_of(obj))
    if key not in obj:
        raise FormatError(f"{where}: missing field '{key}'", line_of(obj))
    return obj[key]


def pose_from_json(node, where) -> Pose:
    try:
        m = np.asarray(node, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        return Pose.from_matrix(m)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{where}: {exc}", line_of(node)) from None


def camera_from_node(node, where):
    try:
        return camera_from_json(node)
    except KeyError as exc:
        raise FormatError(f"{where}: missing field {exc}", line_of(node)) from None
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{where}: {exc}", line_of(node)) from None


def pose_to_json(p: Pose) -> list:
    return [[float(x) for x in row] for row in p.matrix()]


# -- scene documents ------------------------------------------------------------------

def _tensor_ref(tdir: Path, root: Path, name: str, arr) -> str:
    path = tdir / f"{name}.camt"
    write_camt(path, arr)
    return path.relative_to(root).as_posix()


def save_scene(graph: SceneGraph, out_dir, name: str = "scene.json") -> Path:
    """Write ``scene.json`` plus its CAMT tensors under ``out_dir/tensors``."""
    root = Path(out_dir)
    tdir = root / "tensors"
    tdir.mkdir(parents=True, exist_ok=True)
    views = [{"id": v.id, "camera": camera_to_json(v.camera)} for v in graph.views.values()]
    edges = []
    for e in graph.edges:
        tag = f"e{e.src}_{e.dst}"
        d = {
            "src": e.src,
            "dst": e.dst,
            "pose": pose_to_json(e.pose),
            "radial_dst": _tensor_ref(tdir, root, f"{tag}_radial_dst", e.radial_dst.r),
            "radial_src": _tensor_ref(tdir, root, f"{tag}_radial_src", e.radial_src.r),
            "conf_dst": _tensor_ref(tdir, root, f"{tag}_conf_dst", e.conf_dst.sigma),
            "conf_src": _tensor_ref(tdir, root, f"{tag}_conf_src", e.conf_src.sigma),
        }
        if e.pair_scale is not None:
            d["pair_scale"] = float(e.pair_scale)
        for role, rays in (("dst", e.rays_dst), ("src", e.rays_src)):
            if rays is not None:
                d[f"rays_{role}"] = _tensor_ref(tdir, root, f"{tag}_rays_{role}",
                                                np.where(rays.valid[..., None], rays.dirs, 0.0))
        if e.matches is not None:
            d["matches"] = _tensor_ref(tdir, root, f"{tag}_matches", np.asarray(e.matches).reshape(-1, 2))
        edges.append(d)
    doc = {"version": SCENE_VERSION, "views": views, "edges": edges, "meta": _jsonable(graph.meta)}
    path = root / name
    write_json(path, doc)
    return path


def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[str(k)] = v
    return out


def _load_tensor(root: Path, ref, where, node):
    if not isinstance(ref, str):
        raise FormatError(f"{where}: tensor reference must be a relative path", line_of(node))
    path = root / ref
    if not path.is_file():
        raise FormatError(f"{where}: tensor file '{ref}' not found", line_of(node))
    try:
        return read_camt(path).astype(float)
    except FormatError as exc:
        raise FormatError(f"{where}: {ref}: {exc}", line_of(node)) from None


def load_scene(path) -> SceneGraph:
    path = Path(path)
    root = path.parent
    doc = loads_located(path.read_text())
    version = _field(doc, "version", "scene")
    if version != SCENE_VERSION:
        raise FormatError(f"scene: unsupported version {version}", line_of(doc))
    views = {}
    for n, vd in enumerate(_field(doc, "views", "scene")):
        where = f"views[{n}]"
        vid = _field(vd, "id", where)
        cam = camera_from_node(_field(vd, "camera", where), f"{where}.camera")
        if not isinstance(vid, int) or vid in views:
            raise FormatError(f"{where}: view id must be a unique integer", line_of(vd))
        views[vid] = View.from_camera(vid, cam)
    edges = []
    for n, ed in enumerate(_field(doc, "edges", "scene")):
        where = f"edges[{n}]"
        src, dst = _field(ed, "src", where), _field(ed, "dst", where)
        if src not in views or dst not in views:
            raise FormatError(f"{where}: unknown view in edge ({src}, {dst})", line_of(ed))
        pose = pose_from_json(_field(ed, "pose", where), f"{where}.pose")
        t = {k: _load_tensor(root, _field(ed, k, where), f"{where}.{k}", ed)
             for k in ("radial_dst", "radial_src", "conf_dst", "conf_src")}
        for k, vid in (("radial_dst", dst), ("radial_src", src), ("conf_dst", dst), ("conf_src", src)):
            if t[k].shape != views[vid].rays.shape:
                raise FormatError(f"{where}.{k}: shape {t[k].shape} does not match view {vid} "
                                  f"{views[vid].rays.shape}", line_of(ed))
        rays = {}
        for role, vid in (("dst", dst), ("src", src)):
            key = f"rays_{role}"
            if key in ed:
                d = _load_tensor(root, ed[key], f"{where}.{key}", ed)
                if d.shape != views[vid].rays.shape + (3,):
                    raise FormatError(f"{where}.{key}: bad shape {d.shape}", line_of(ed))
                rays[role] = RayField(d, np.linalg.norm(d, axis=-1) > 0)
        matches = None
        if "matches" in ed:
            m = _load_tensor(root, ed["matches"], f"{where}.matches", ed)
            matches = m.reshape(-1, 2).astype(np.int64)
        edges.append(EdgeObservation(
            src, dst, pose,
            RadialMap(t["radial_dst"]), RadialMap(t["radial_src"]),
            ConfidenceMap(t["conf_dst"]), ConfidenceMap(t["conf_src"]),
            pair_scale=ed.get("pair_scale"), rays_dst=rays.get("dst"), rays_src=rays.get("src"),
            matches=matches,
        ))
    meta = dict(doc.get("meta", {}))
    try:
        return SceneGraph(views, edges, meta)
    except (ValueError, KeyError) as exc:
        raise FormatError(f"scene: {exc}", line_of(doc)) from None


def save_gt(poses: dict, path, pair_scales: Optional[dict] = None) -> None:
    """GT sidecar: camera-to-world poses and, optionally, each edge's pair scale."""
    doc = {"version": SCENE_VERSION,
           "views": [{"id": int(v), "pose": pose_to_json(poses[v])} for v in sorted(poses)]}
    if pair_scales is not None:
        doc["edges"] = [{"src": int(s), "dst": int(d), "pair_scale": float(k)}
                        for (s, d), k in sorted(pair_scales.items())]
    write_json(path, doc)


def load_poses(path, key: str = "pose") -> dict:
    """View id -> Pose from a GT sidecar or an alignment result."""
    doc = loads_located(Path(path).read_text())
    out = {}
    for n, vd in enumerate(_field(doc, "views", "poses")):
        out[int(_field(vd, "id", f"views[{n}]"))] = pose_from_json(_field(vd, key, f"views[{n}]"), f"views[{n}].{key}")
    return out


# -- PLY ------------------------------------------------------------------------------

# five stops of a perceptually ordered dark-to-bright map
_CMAP = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=float)


def confidence_colors(conf) -> np.ndarray:
    c = np.asarray(conf, dtype=float)
    if c.size == 0:
        return np.zeros((0, 3), dtype=np.uint8)
    lo, hi = float(c.min()), float(c.max())
    t = (c - lo) / (hi - lo) if hi > lo else np.ones_like(c)
    x = t * (len(_CMAP) - 1)
    stops = np.arange(len(_CMAP))
    rgb = np.stack([np.interp(x, stops, _CMAP[:, k]) for k in range(3)], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def encode_ply(points, conf) -> bytes:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    conf = np.asarray(conf, dtype=float).reshape(-1)
    if len(conf) != len(pts):
        raise ValueError(f"{len(pts)} points vs {len(conf)} confidences")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    rec = np.zeros(len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                    ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rgb = confidence_colors(conf)
    rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    return header.encode("ascii") + rec.tobytes()


def write_ply(path, points, conf) -> None:
    Path(path).write_bytes(encode_ply(points, conf))
