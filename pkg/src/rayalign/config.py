"""JSON configs for the command-line tools, with line-anchored errors."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .align import AlignConfig
from .io import FormatError, line_of, camera_from_node, loads_located, pose_from_json
from .scenegraph import PruneConfig
from .simkit import Box, NoiseModel, Plane, SceneGeometry, SimConfig, Sphere


def read_config(path) -> dict:
    if path is None:
        return {}
    doc = loads_located(Path(path).read_text())
    if not isinstance(doc, dict):
        raise FormatError("config must be a JSON object", line_of(doc))
    return doc


def _scalar(value, kind, where, node):
    if kind is bool:
        if not isinstance(value, bool):
            raise FormatError(f"{where}: expected true/false", line_of(node))
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{where}: expected a number", line_of(node))
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise FormatError(f"{where}: expected an integer", line_of(node))
        return int(value)
    return float(value)


def dataclass_from_json(cls, doc, where: str, overrides=None, skip=()):
    """Build a flat dataclass of numbers/bools; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected an object", line_of(doc))
    known = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            raise FormatError(f"{where}: unknown field '{key}'", line_of(doc))
        default = known[key].default
        if value is None and default is None:
            kwargs[key] = None
            continue
        kind = type(default) if default is not None and default is not dataclasses.MISSING else float
        if kind not in (bool, int, float):
            kind = float
        kwargs[key] = _scalar(value, kind, f"{where}.{key}", doc)
    kwargs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{where}: {exc}", line_of(doc)) from None


def prune_config(doc, **overrides) -> PruneConfig:
    return dataclass_from_json(PruneConfig, doc, "prune", overrides)


def align_config(doc, **overrides) -> AlignConfig:
    return dataclass_from_json(AlignConfig, doc, "align", overrides)


def _vec3(node, where):
    if not isinstance(node, list) or len(node) != 3:
        raise FormatError(f"{where}: expected 3 numbers", line_of(node))
    return tuple(_scalar(x, float, where, node) for x in node)


def _primitive(node, where):
    if not isinstance(node, dict) or "type" not in node:
        raise FormatError(f"{where}: expected an object with a 'type'", line_of(node))
    kind = node["type"]
    spec = {"box": (Box, ("lo", "hi")), "sphere": (Sphere, ("center", "radius")),
            "plane": (Plane, ("point", "normal"))}
    if kind not in spec:
        raise FormatError(f"{where}: unknown primitive type '{kind}'", line_of(node))
    cls, keys = spec[kind]
    extra = set(node) - set(keys) - {"type"}
    if extra:
        raise FormatError(f"{where}: unknown field '{sorted(extra)[0]}'", line_of(node))
    args = []
    for k in keys:
        if k not in node:
            raise FormatError(f"{where}: missing field '{k}'", line_of(node))
        args.append(_scalar(node[k], float, f"{where}.{k}", node) if k == "radius"
                    else _vec3(node[k], f"{where}.{k}"))
    if kind == "sphere" and args[1] <= 0:
        raise FormatError(f"{where}: radius must be positive", line_of(node))
    return cls(*args)


def sim_config(doc, seed=None) -> SimConfig:
    """Simulation config: see ``docs/formats.md`` for the schema."""
    if not isinstance(doc, dict):
        raise FormatError("simulate: expected an object", line_of(doc))
    allowed = {"n_views", "seed", "profile", "top_k", "noise", "cameras", "poses", "geometry", "rogue_views"}
    for key in doc:
        if key not in allowed:
            raise FormatError(f"simulate: unknown field '{key}'", line_of(doc))
    kw = {}
    if "n_views" in doc:
        kw["n_views"] = _scalar(doc["n_views"], int, "simulate.n_views", doc)
        if kw["n_views"] < 2:
            raise FormatError("simulate.n_views: need at least 2 views", line_of(doc))
    if "seed" in doc:
        kw["seed"] = _scalar(doc["seed"], int, "simulate.seed", doc)
    if seed is not None:
        kw["seed"] = int(seed)
    if "profile" in doc:
        if doc["profile"] not in ("2d3ds", "360loc", "adt"):
            raise FormatError(f"simulate.profile: unknown profile {doc['profile']!r}", line_of(doc))
        kw["profile"] = doc["profile"]
    if doc.get("top_k") is not None:
        kw["top_k"] = _scalar(doc["top_k"], int, "simulate.top_k", doc)
    if "noise" in doc:
        noise = dict(doc["noise"]) if isinstance(doc["noise"], dict) else doc["noise"]
        rng = None
        if isinstance(noise, dict) and "edge_scale_range" in noise:
            node = noise.pop("edge_scale_range")
            if not isinstance(node, list) or len(node) != 2:
                raise FormatError("simulate.noise.edge_scale_range: expected [lo, hi]", line_of(doc["noise"]))
            rng = tuple(_scalar(x, float, "simulate.noise.edge_scale_range", doc["noise"]) for x in node)
        if isinstance(noise, dict):
            noise = type(doc["noise"])(noise)
            noise.line = line_of(doc["noise"])
        kw["noise"] = dataclass_from_json(NoiseModel, noise, "simulate.noise",
                                          {"edge_scale_range": rng}, skip=("edge_scale_range",))
    n = kw.get("n_views", SimConfig.n_views)
    if "cameras" in doc:
        cams = doc["cameras"]
        if not isinstance(cams, list) or len(cams) != n:
            raise FormatError(f"simulate.cameras: expected a list of {n} camera specs", line_of(cams, line_of(doc)))
        kw["cameras"] = [camera_from_node(c, f"simulate.cameras[{k}]") for k, c in enumerate(cams)]
    if "poses" in doc:
        poses = doc["poses"]
        if not isinstance(poses, list) or len(poses) != n:
            raise FormatError(f"simulate.poses: expected {n} 4x4 matrices", line_of(poses, line_of(doc)))
        kw["poses"] = [pose_from_json(p, f"simulate.poses[{k}]") for k, p in enumerate(poses)]
    if "geometry" in doc:
        geo = doc["geometry"]
        if not isinstance(geo, list) or not geo:
            raise FormatError("simulate.geometry: expected a non-empty list of primitives", line_of(geo, line_of(doc)))
        kw["geometry"] = SceneGeometry(tuple(_primitive(p, f"simulate.geometry[{k}]") for k, p in enumerate(geo)))
    if "rogue_views" in doc:
        rv = doc["rogue_views"]
        if not isinstance(rv, list):
            raise FormatError("simulate.rogue_views: expected a list of view ids", line_of(doc))
        ids = tuple(_scalar(x, int, "simulate.rogue_views", rv) for x in rv)
        if any(not 0 <= v < n for v in ids):
            raise FormatError("simulate.rogue_views: view id out of range", line_of(rv))
        kw["rogue_views"] = ids
    return SimConfig(**kw)
