"""``rayalign`` command-line tool.

Exit codes: 0 success, 2 usage/config/format errors, 3 disconnected graph,
4 non-finite objective during alignment.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .align import optimize
from .cameras import ray_field
from .errors import Disconnected, IsolatedView, NonFiniteObjective, RayAlignError
from .io import (FormatError, camera_from_node, dumps, line_of, load_poses, load_scene, loads_located, pose_to_json,
                 read_camt, save_gt, save_scene, write_camt, write_json, write_ply)
from .metrics import evaluate
from .scenegraph import prune
from .simkit import simulate

EXIT_USAGE = 2
EXIT_DISCONNECTED = 3
EXIT_NONFINITE = 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def _located(path, fn, *args):
    """Run a parser, turning format errors into ``path:line: message``."""
    try:
        return fn(*args)
    except FormatError as exc:
        raise CliError(f"{path}:{exc.line or 1}: {exc}") from None
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None


def _config(path):
    return _located(path, cfgmod.read_config, path) if path else {}


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- commands --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    doc = _config(args.config)
    sim_cfg = _located(args.config, cfgmod.sim_config, doc, args.seed)
    sim = simulate(sim_cfg)
    out = _out_dir(args.out)
    save_scene(sim.graph, out)
    save_gt(sim.gt_poses, out / "gt.json", {e.key: e.pair_scale for e in sim.graph.edges})
    print(f"simulated {len(sim.graph.views)} views, {len(sim.graph.edges)} edges -> {out / 'scene.json'}")
    return 0


def cmd_prune(args) -> int:
    doc = _config(args.config)
    pcfg = _located(args.config, cfgmod.prune_config, doc)
    overrides = {"tau_rot": args.tau_rot, "tau_tra": args.tau_tra, "quantile": args.quantile, "stride": args.stride}
    pcfg = _apply(pcfg, overrides)
    graph = _located(args.scene, load_scene, args.scene)
    pruned, report = prune(graph, pcfg)
    out = _out_dir(args.out)
    save_scene(pruned, out)
    write_json(out / "prune_report.json", report.to_json())
    kept = sum(v == "kept" for v in report.verdicts)
    print(f"kept {kept}/{len(report.verdicts)} edges, {len(report.kept_views)} views -> {out / 'scene.json'}")
    return 0


def _apply(cfg, overrides):
    kw = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(cfg, **kw)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_align(args) -> int:
    doc = _config(args.config)
    acfg = _located(args.config, cfgmod.align_config, doc)
    acfg = _apply(acfg, {"cycles": args.cycles, "iters_per_stage": args.iters, "lr_init": args.lr,
                         "seed": args.seed})
    graph = _located(args.scene, load_scene, args.scene)
    res = optimize(graph, acfg)
    out = _out_dir(args.out)
    pts, conf, src = res.fused_cloud()
    write_camt(out / "cloud.camt", pts)
    write_camt(out / "cloud_conf.camt", conf)
    doc = {
        "version": 1,
        "anchor": res.anchor,
        "views": [{"id": v, "pose": pose_to_json(res.poses[v]), "log_scale": res.log_scales[v],
                   "scale": float(np.exp(res.log_scales[v]))} for v in res.ids],
        "trace": res.trace,
        "stages": [{"name": n, "start": s, "objective": o} for n, s, o in res.stages],
        "cloud": "cloud.camt",
        "cloud_conf": "cloud_conf.camt",
        "n_points": int(len(pts)),
    }
    write_json(out / "result.json", doc)
    print(f"objective {res.trace[0]:.6e} -> {min(res.trace):.6e} -> {out / 'result.json'}")
    return 0


def cmd_eval(args) -> int:
    est = _located(args.result, load_poses, args.result)
    gt = _located(args.gt, load_poses, args.gt)
    missing = sorted(set(est) - set(gt))
    if missing:
        raise CliError(f"{args.gt}: no ground truth for views {missing}")
    try:
        report = evaluate(est, gt)
    except RayAlignError as exc:
        raise CliError(f"{args.result}: {exc}") from None
    text = dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_export_ply(args) -> int:
    path = Path(args.result)
    doc = _located(path, lambda p: loads_located(p.read_text()), path)
    if not isinstance(doc, dict) or "cloud" not in doc or "cloud_conf" not in doc:
        raise CliError(f"{path}:{line_of(doc)}: not an alignment result (missing cloud references)")
    pts = _located(path.parent / doc["cloud"], read_camt, path.parent / doc["cloud"])
    conf = _located(path.parent / doc["cloud_conf"], read_camt, path.parent / doc["cloud_conf"])
    try:
        write_ply(args.out, pts, conf)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    print(f"wrote {len(pts)} vertices -> {args.out}")
    return 0


def cmd_rays(args) -> int:
    if not args.config:
        raise CliError("rays: --config with a camera spec is required")
    doc = _config(args.config)
    node = doc["camera"] if "camera" in doc else doc  # {"camera": {...}} or a bare camera spec
    cam = _located(args.config, camera_from_node, node, "camera")
    field = ray_field(cam)
    write_camt(args.out, np.where(field.valid[..., None], field.dirs, 0.0))
    print(f"rays {field.dirs.shape} -> {args.out}")
    return 0


# -- entry point ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rayalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic multi-camera scene graph")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("prune", help="symmetric pose check, overlap gate, largest component")
    s.add_argument("scene")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--tau-rot", type=float)
    s.add_argument("--tau-tra", type=float)
    s.add_argument("--quantile", type=float)
    s.add_argument("--stride", type=int)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("align", help="global alignment of a pruned scene graph")
    s.add_argument("scene")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--cycles", type=int)
    s.add_argument("--iters", type=int, help="iterations per alternating stage")
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("eval", help="pose metrics of an alignment result against ground truth")
    s.add_argument("result")
    s.add_argument("--gt", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-ply", help="write the fused cloud of a result as binary PLY")
    s.add_argument("result")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_ply)

    s = sub.add_parser("rays", help="dump a camera's ray field as a CAMT tensor")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rays)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (Disconnected, IsolatedView) as exc:
        print(f"error: disconnected graph: {exc}", file=sys.stderr)
        return EXIT_DISCONNECTED
    except NonFiniteObjective as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except RayAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
