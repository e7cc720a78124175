import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from plyfile import PlyData

from rayalign.cameras import EquirectCamera
from rayalign.cli import main
from rayalign.geometry import Pose
from rayalign.io import (FormatError, decode_camt, encode_camt, encode_ply, load_poses, load_scene, loads_located,
                         read_camt, save_gt, save_scene, write_camt)
from rayalign.pointmap import ConfidenceMap, RadialMap
from rayalign.scenegraph import EdgeObservation, SceneGraph, View
from rayalign.simkit import curate_pairs, loop_trajectory


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


# -- CAMT ------------------------------------------------------------------------------

def test_camt_layout():
    buf = encode_camt(np.arange(6, dtype=float).reshape(2, 3))
    assert buf[:4] == b"CAMT"
    assert buf[4:6] == (1).to_bytes(2, "little") and buf[6] == 0 and buf[7] == 2
    assert buf[8:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(buf) == 16 + 6 * 4
    np.testing.assert_array_equal(np.frombuffer(buf[16:], "<f4"), np.arange(6))


def test_camt_round_trip(rng, tmp_path):
    a = rng.normal(size=(3, 4, 3)).astype(np.float32)
    write_camt(tmp_path / "a.camt", a)
    b = read_camt(tmp_path / "a.camt")
    assert b.dtype == np.float32 and np.array_equal(a, b)
    assert decode_camt(encode_camt(np.float32(2.5))).shape == ()


@pytest.mark.parametrize("mutate", [
    lambda b: b"XAMT" + b[4:],
    lambda b: b[:4] + (2).to_bytes(2, "little") + b[6:],
    lambda b: b[:6] + b"\x01" + b[7:],
    lambda b: b[:-4],
    lambda b: b + b"\x00",
])
def test_camt_rejects_malformed(mutate):
    with pytest.raises(FormatError):
        decode_camt(mutate(encode_camt(np.ones((2, 2)))))


def test_camt_rejects_non_finite():
    with pytest.raises(FormatError):
        encode_camt(np.array([1.0, np.nan]))
    buf = bytearray(encode_camt(np.ones(2)))
    buf[-4:] = np.array([np.inf], "<f4").tobytes()
    with pytest.raises(FormatError):
        decode_camt(bytes(buf))


# -- JSON location ------------------------------------------------------------------------

def test_loads_located_lines():
    from rayalign.io import line_of
    doc = loads_located('{\n  "a": 1,\n  "b": {\n    "c": [1,\n 2]\n  }\n}\n')
    assert doc == {"a": 1, "b": {"c": [1, 2]}}
    assert line_of(doc["b"]) == 3 and line_of(doc["b"]["c"]) == 4
    with pytest.raises(FormatError) as exc:
        loads_located('{\n  "a": 1,\n  "b": ]\n}')
    assert exc.value.line == 3


# -- scene round trip ---------------------------------------------------------------------

def f32(a):
    return np.asarray(a, np.float32).astype(float)


def test_scene_round_trip_lossless(noiseless_pruned, tmp_path):
    g = noiseless_pruned[0]
    save_scene(g, tmp_path / "a")
    back = load_scene(tmp_path / "a" / "scene.json")
    assert back.view_ids == g.view_ids
    assert [e.key for e in back.edges] == [e.key for e in g.edges]
    for a, b in zip(g.edges, back.edges):
        np.testing.assert_array_equal(b.radial_dst.r, f32(a.radial_dst.r))
        np.testing.assert_array_equal(b.conf_src.sigma, f32(a.conf_src.sigma))
        np.testing.assert_array_equal(b.matches, a.matches)
        np.testing.assert_array_equal(b.pose.R, a.pose.R)
        assert b.pair_scale == a.pair_scale
    assert back.meta == g.meta
    # a second save of the loaded graph is byte-identical
    save_scene(back, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_gt_sidecar_round_trip(rng, tmp_path):
    from rayalign.geometry import random_rotation
    poses = {v: Pose(random_rotation(rng), rng.normal(size=3)) for v in range(4)}
    save_gt(poses, tmp_path / "gt.json", {(0, 1): 1.5, (1, 0): 0.7})
    back = load_poses(tmp_path / "gt.json")
    for v in poses:
        np.testing.assert_allclose(back[v].matrix(), poses[v].matrix(), atol=1e-12)
    doc = json.loads((tmp_path / "gt.json").read_text())
    assert doc["edges"][0] == {"src": 0, "dst": 1, "pair_scale": 1.5}


def test_scene_shape_mismatch_reports_line(noiseless_pruned, tmp_path):
    save_scene(noiseless_pruned[0], tmp_path)
    e = noiseless_pruned[0].edges[0]
    write_camt(tmp_path / "tensors" / f"e{e.src}_{e.dst}_radial_dst.camt", np.ones((2, 2)))
    with pytest.raises(FormatError) as exc:
        load_scene(tmp_path / "scene.json")
    assert "radial_dst" in str(exc.value) and exc.value.line > 1


# -- PLY --------------------------------------------------------------------------------

def test_ply_ten_points(rng, tmp_path):
    pts = rng.normal(size=(10, 3))
    conf = rng.uniform(0.1, 1.0, 10)
    path = tmp_path / "c.ply"
    path.write_bytes(encode_ply(pts, conf))
    head = path.read_bytes().split(b"end_header\n")[0].decode()
    assert "format binary_little_endian 1.0" in head
    ply = PlyData.read(str(path))
    v = ply["vertex"]
    assert v.count == 10
    np.testing.assert_allclose(np.stack([v["x"], v["y"], v["z"]], 1), pts.astype(np.float32))
    assert v["red"].dtype == np.uint8
    hi, lo = int(np.argmax(conf)), int(np.argmin(conf))
    assert (v["red"][hi], v["green"][hi], v["blue"][hi]) == (253, 231, 37)
    assert (v["red"][lo], v["green"][lo], v["blue"][lo]) == (68, 1, 84)


# -- CLI ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = root / "sim.json"
    cfg.write_text(json.dumps({"seed": 3, "noise": {"edge_scale_range": [0.5, 2.0]}}))
    acfg = root / "align.json"
    acfg.write_text(json.dumps({"optimize_depth": False, "joint_iters": 600, "lr_floor": 1e-8}))
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == 0
    assert main(["prune", str(root / "sim" / "scene.json"), "--out", str(root / "pruned")]) == 0
    assert main(["align", str(root / "pruned" / "scene.json"), "--config", str(acfg), "--out",
                 str(root / "aligned"), "--cycles", "2", "--iters", "40"]) == 0
    return root


def test_simulate_edge_count(pipeline):
    doc = json.loads((pipeline / "sim" / "scene.json").read_text())
    assert len(doc["views"]) == 8
    pairs = curate_pairs(loop_trajectory(8))
    assert len(doc["edges"]) == 2 * len(pairs)
    gt = json.loads((pipeline / "sim" / "gt.json").read_text())
    assert len(gt["edges"]) == len(doc["edges"]) and all(0.5 <= e["pair_scale"] <= 2 for e in gt["edges"])


def test_prune_outputs(pipeline):
    rep = json.loads((pipeline / "pruned" / "prune_report.json").read_text())
    assert {"edges", "overlap_threshold", "kept_views", "thresholds"} <= set(rep)
    assert rep["thresholds"]["tau_rot_deg"] == 5.0


def test_align_eval_export(pipeline, tmp_path, capsys):
    res = json.loads((pipeline / "aligned" / "result.json").read_text())
    assert len(res["views"]) == 8 and res["n_points"] > 0
    cloud = read_camt(pipeline / "aligned" / res["cloud"])
    assert cloud.shape == (res["n_points"], 3)
    capsys.readouterr()
    assert main(["eval", str(pipeline / "aligned" / "result.json"), "--gt", str(pipeline / "sim" / "gt.json"),
                 "--out", str(tmp_path / "m.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((tmp_path / "m.json").read_text())
    assert report["n_pairs"] == 28 and report["rra@15"] == 100.0 and report["ate_rmse"] < 0.1
    assert main(["export-ply", str(pipeline / "aligned" / "result.json"), "--out", str(tmp_path / "c.ply")]) == 0
    assert PlyData.read(str(tmp_path / "c.ply"))["vertex"].count == res["n_points"]


def test_rays_equirect(tmp_path):
    cfg = tmp_path / "cam.json"
    cfg.write_text(json.dumps({"camera": {"model": "equirect", "width": 8, "height": 4}}))
    assert main(["rays", "--config", str(cfg), "--out", str(tmp_path / "r.camt")]) == 0
    r = read_camt(tmp_path / "r.camt")
    assert r.shape == (4, 8, 3)
    np.testing.assert_allclose(np.linalg.norm(r, axis=-1), 1.0, atol=1e-6)


def test_config_error_is_line_anchored(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "seed": 1,\n  "noise": {\n    "radial_sigma": 0.1\n  }\n}\n')
    code, err = run(["simulate", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert f"{cfg}:3:" in err and "radial_sigma" in err


def test_invalid_camera_spec_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cams = [{"model": "equirect", "width": 8, "height": 4}] * 2
    cams[1] = {"model": "pinhole", "width": 8, "height": 8, "fx": -1, "fy": 1, "cx": 0, "cy": 0}
    cfg.write_text(json.dumps({"n_views": 2, "cameras": cams}, indent=1))
    code, err = run(["simulate", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "cameras[1]" in err
    code, err = run(["rays", "--config", tmp_path / "missing.json", "--out", tmp_path / "r.camt"], capsys)
    assert code == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["align"])
    assert exc.value.code == 2
    cfg = tmp_path / "p.json"
    cfg.write_text('{"quantile": "high"}')
    (tmp_path / "s").mkdir()
    code, _ = run(["prune", tmp_path / "s" / "scene.json", "--out", tmp_path / "o"], capsys)
    assert code == 2
    code, err = run(["prune", tmp_path / "s" / "scene.json", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "quantile" in err


def disconnected_scene(root):
    cam = EquirectCamera(4, 2)
    views = {v: View.from_camera(v, cam) for v in range(4)}
    ones = np.ones((2, 4))
    matches = np.stack([np.arange(8), np.arange(8)], 1)
    edges = [EdgeObservation(s, d, Pose.identity(), RadialMap(ones), RadialMap(ones), ConfidenceMap(ones),
                             ConfidenceMap(ones), matches=matches) for s, d in [(0, 1), (1, 0), (2, 3), (3, 2)]]
    return save_scene(SceneGraph(views, edges), root)


def test_disconnected_exit_3(tmp_path, capsys):
    code, err = run(["align", disconnected_scene(tmp_path / "s"), "--out", tmp_path / "o"], capsys)
    assert code == 3 and "disconnected" in err


def test_non_finite_exit_4(pipeline, tmp_path, capsys):
    code, err = run(["align", pipeline / "pruned" / "scene.json", "--out", tmp_path / "o", "--lr", "1e6",
                     "--cycles", "1", "--iters", "20"], capsys)
    assert code == 4 and "objective" in err


def test_cli_byte_identical(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"seed": 9, "noise": {"radial_rel_sigma": 0.01, "rot_sigma_deg": 1.0}}))
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["simulate", "--config", str(cfg), "--out", str(out / "sim")]) == 0
        assert main(["prune", str(out / "sim" / "scene.json"), "--out", str(out / "pruned")]) == 0
        assert main(["align", str(out / "pruned" / "scene.json"), "--out", str(out / "al"),
                     "--cycles", "1", "--iters", "15"]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rayalign.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
