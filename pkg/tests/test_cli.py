import csv
import io
import json

import numpy as np
import pytest

from surfalign import cli, shapes
from surfalign import mesh as M
from surfalign.projection import Projector
from surfalign.render import read_ppm


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# ------------------------------------------------------------------ validate

def test_validate_closed_cube(capsys, data_dir):
    code, out, _ = run(capsys, "validate", data_dir / "cube.obj")
    assert code == 0 and json.loads(out)["watertight"] is True


def test_validate_open_cube(capsys, data_dir):
    code, out, _ = run(capsys, "validate", data_dir / "cube_open.obj")
    rep = json.loads(out)
    assert code == 2 and rep["watertight"] is False
    assert len(rep["edge_defects"]) == 3


def test_validate_garbage_and_missing(capsys, tmp_path):
    bad = tmp_path / "junk.obj"
    bad.write_bytes(b"v 1 2\nf one two three\n\x00\xff")
    code, _, err = run(capsys, "validate", bad)
    assert code == 1 and "junk.obj" in err
    assert run(capsys, "validate", tmp_path / "nope.obj")[0] == 1


# ------------------------------------------------------------------ project

def _write_points(path, pts, header=True):
    with open(path, "w") as fh:
        if header:
            fh.write("x,y,z\n")
        for p in pts:
            fh.write(",".join(repr(float(v)) for v in p) + "\n")


def test_project_identity_surface_samples(capsys, tmp_path, data_dir, rng):
    m = M.load_mesh(data_dir / "icosphere2.obj")
    f, b = shapes.sample_surface(m, 200, rng, margin=1e-6)
    pts = np.einsum("ik,ikj->ij", b, m.vertices[m.faces[f]])
    _write_points(tmp_path / "p.csv", pts)
    obj = data_dir / "icosphere2.obj"
    code, out, _ = run(capsys, "project", obj, obj, tmp_path / "p.csv")
    rows = _rows(out)
    assert code == 0 and len(rows) == len(pts)
    assert list(rows[0]) == cli.PROJECT_HEADER
    h = np.array([float(r["h"]) for r in rows])
    assert np.abs(h).max() < 1e-7
    assert [r["fallback"] for r in rows] == ["0"] * len(pts)
    # order preserved
    assert np.array_equal(np.array([[float(r[k]) for k in "xyz"] for r in rows]), pts)


def test_project_csv_roundtrip(capsys, tmp_path, data_dir, rng):
    obj = data_dir / "ellipsoid3.obj"
    m = M.load_mesh(obj)
    pr = Projector(m)
    f, b = shapes.sample_surface(m, 300, rng, margin=1e-6)
    x = pr.unproject(f, b, rng.uniform(-0.1, 0.2, 300))
    _write_points(tmp_path / "p.csv", x, header=False)
    code, out, _ = run(capsys, "project", obj, obj, tmp_path / "p.csv", "--out", tmp_path / "o.csv")
    assert code == 0 and out == ""
    rows = _rows((tmp_path / "o.csv").read_text())
    face = np.array([int(r["face"]) for r in rows])
    bary = np.array([[float(r[k]) for k in ("a1", "a2", "a3")] for r in rows])
    h = np.array([float(r["h"]) for r in rows])
    back = pr.unproject(face, bary, h)
    assert np.abs(back - x).max() < 1e-6


def test_project_nearest_method(capsys, tmp_path, data_dir):
    obj = data_dir / "cube.obj"
    _write_points(tmp_path / "p.csv", [[0.4, 0.3, 1.25]])
    code, out, _ = run(capsys, "project", obj, obj, tmp_path / "p.csv", "--method", "nearest")
    r = _rows(out)[0]
    assert code == 0 and float(r["h"]) == pytest.approx(0.25) and float(r["sz"]) == pytest.approx(1.0)


def test_project_empty_and_comments(capsys, tmp_path, data_dir):
    obj = data_dir / "cube.obj"
    (tmp_path / "e.csv").write_text("")
    code, out, _ = run(capsys, "project", obj, obj, tmp_path / "e.csv")
    assert code == 0 and out.strip() == ",".join(cli.PROJECT_HEADER)
    (tmp_path / "c.csv").write_text("# comment\n\n0.5,0.5,1.5\n")
    assert len(_rows(run(capsys, "project", obj, obj, tmp_path / "c.csv")[1])) == 1


def test_project_bad_points(capsys, tmp_path, data_dir):
    obj = data_dir / "cube.obj"
    (tmp_path / "b.csv").write_text("0,0,0\n1,2,zz\n")
    code, _, err = run(capsys, "project", obj, obj, tmp_path / "b.csv")
    assert code == 1 and ":2" in err
    (tmp_path / "n.csv").write_text("0,0,nan\n")
    assert run(capsys, "project", obj, obj, tmp_path / "n.csv")[0] == 1


def test_project_topology_mismatch(capsys, tmp_path, data_dir):
    _write_points(tmp_path / "p.csv", [[0, 0, 2]])
    code, _, err = run(capsys, "project", data_dir / "icosphere1.obj", data_dir / "icosphere2.obj",
                       tmp_path / "p.csv")
    assert code == 2 and "faces" in err


def test_project_from_stdin(capsys, monkeypatch, data_dir):
    monkeypatch.setattr("sys.stdin", io.StringIO("0.5,0.5,1.5\n"))
    obj = data_dir / "cube.obj"
    code, out, _ = run(capsys, "project", obj, obj, "-")
    assert code == 0 and float(_rows(out)[0]["h"]) == pytest.approx(0.5)


# ------------------------------------------------------------------ roundtrip

def test_roundtrip_icosphere(capsys, data_dir):
    obj = data_dir / "icosphere3.obj"
    code, out, _ = run(capsys, "roundtrip", obj, obj, "--n", 10000, "--seed", 1)
    st = json.loads(out)
    assert code == 0 and st["max_error"] < 1e-6 and st["fallback_count"] == 0
    assert set(st) >= {"max_error", "mean_error", "excluded_count", "fallback_count"}


def test_roundtrip_cube(capsys, data_dir):
    obj = data_dir / "cube.obj"
    st = json.loads(run(capsys, "roundtrip", obj, obj, "--n", 10000)[1])
    assert st["max_error"] < 1e-6 and st["excluded_count"] >= 0


def test_roundtrip_zero_and_negative(capsys, data_dir):
    obj = data_dir / "cube.obj"
    code, out, _ = run(capsys, "roundtrip", obj, obj, "--n", 0)
    st = json.loads(out)
    assert code == 0 and st["max_error"] == 0 and st["excluded_count"] == 0 and st["n"] == 0
    assert run(capsys, "roundtrip", obj, obj, "--n", -1)[0] == 2


def test_roundtrip_posed_pair(data_dir):
    from surfalign.surfcoord import MeshPair
    canon = M.load_mesh(data_dir / "icosphere3.obj")
    posed = M.load_mesh(data_dir / "ellipsoid3.obj")
    st = cli.roundtrip_stats(MeshPair(posed, canon), 3000, 5)
    assert st["max_relative_error"] < 1e-6 and st["face_mismatch"] == 0


def test_roundtrip_excludes_edge_projections(monkeypatch):
    # plant samples exactly on edges; they must be counted, not measured
    from surfalign.surfcoord import MeshPair
    m = shapes.icosphere(1)
    real = cli.sample_shell

    def on_edges(proj, n, rng, lo, hi):
        x, f, b, h = real(proj, n, rng, lo, hi)
        b[:5] = [0.5, 0.5, 0.0]
        return proj.unproject(f, b, np.abs(h), check=False), f, b, np.abs(h)

    monkeypatch.setattr(cli, "sample_shell", on_edges)
    st = cli.roundtrip_stats(MeshPair.identity(m), 100, 0)
    assert st["excluded_count"] >= 5 and st["max_error"] < 1e-6


# ------------------------------------------------------------------ stats

def test_stats_dispersion(capsys, data_dir):
    code, out, _ = run(capsys, "stats", data_dir / "icosphere1.obj", "--h", 0.05, "--n", 10000)
    st = json.loads(out)
    near = st["nearest"]["fraction_below"]["0.001"]
    disp = st["dispersed"]["fraction_below"]["0.001"]
    assert code == 0 and near >= 10 * disp and near > 0.05
    hist = st["nearest"]["min_bary_histogram"]
    assert sum(hist["counts"]) == 10000 and len(hist["bin_edges"]) == len(hist["counts"]) + 1


def test_stats_near_surface_comparable(capsys, data_dir):
    st = json.loads(run(capsys, "stats", data_dir / "icosphere1.obj", "--h", 1e-6, "--n", 5000)[1])
    for t in ("0.001", "0.01"):
        a, b = st["nearest"]["fraction_below"][t], st["dispersed"]["fraction_below"][t]
        assert abs(a - b) < 0.01


def test_stats_single_sample(capsys, data_dir):
    code, out, _ = run(capsys, "stats", data_dir / "cube.obj", "--n", 1)
    st = json.loads(out)
    assert code == 0 and st["n"] == 1
    assert sum(st["dispersed"]["min_bary_histogram"]["counts"]) == 1


def test_stats_deterministic(capsys, data_dir):
    a = run(capsys, "stats", data_dir / "icosphere1.obj", "--n", 500, "--seed", 3)[1]
    b = run(capsys, "stats", data_dir / "icosphere1.obj", "--n", 500, "--seed", 3)[1]
    assert a == b


# ------------------------------------------------------------------ render

def _render(capsys, data_dir, out, spec, *extra, mesh="icosphere3.obj", camera="camera.json"):
    obj = data_dir / mesh
    return run(capsys, "render", obj, obj, data_dir / camera, data_dir / spec, "--out", out, *extra)


@pytest.mark.parametrize("spec, golden", [("checker.json", "golden_checker.ppm"),
                                          ("hemispheres.json", "golden_hemispheres.ppm"),
                                          ("sphere.json", "golden_sphere.ppm")])
def test_render_golden(capsys, tmp_path, data_dir, spec, golden):
    code, out, _ = _render(capsys, data_dir, tmp_path / "a.ppm", spec)
    assert code == 0
    assert (tmp_path / "a.ppm").read_bytes() == (data_dir / golden).read_bytes()
    st = json.loads(out)
    assert st["fallback_count"] == 0 and st["samples_per_ray"] == 64 and st["h0"] == 0.2
    assert 0.2 < st["mean_opacity"] < 1.0


def test_render_hemisphere_colors(tmp_path, data_dir):
    img = read_ppm(data_dir / "golden_hemispheres.ppm").astype(int)
    lit = img.sum(axis=2) > 200
    red = lit & (img[..., 0] > img[..., 2])
    blue = lit & (img[..., 2] > img[..., 0])
    rows_r = np.nonzero(red.any(axis=1))[0]
    rows_b = np.nonzero(blue.any(axis=1))[0]
    # upper hemisphere red, lower blue; the camera sits slightly above the equator
    assert rows_r.size and rows_b.size and rows_r.mean() < rows_b.mean()


def test_render_deterministic_and_workers(capsys, tmp_path, data_dir):
    _render(capsys, data_dir, tmp_path / "a.ppm", "checker.json", "--seed", 9)
    _render(capsys, data_dir, tmp_path / "b.ppm", "checker.json", "--seed", 9, "--workers", 4)
    _render(capsys, data_dir, tmp_path / "c.ppm", "checker.json", "--seed", 10)
    a, b, c = ((tmp_path / f"{k}.ppm").read_bytes() for k in "abc")
    assert a == b and a != c


def test_render_camera_away(capsys, tmp_path, data_dir):
    spec = json.loads((data_dir / "sphere.json").read_text())
    spec["background"] = [0.2, 0.4, 0.6]
    (tmp_path / "s.json").write_text(json.dumps(spec))
    obj = data_dir / "icosphere3.obj"
    code, out, _ = run(capsys, "render", obj, obj, data_dir / "camera_away.json", tmp_path / "s.json",
                       "--out", tmp_path / "a.ppm")
    img = read_ppm(tmp_path / "a.ppm")
    assert code == 0 and img.shape == (12, 16, 3)
    assert (img == img[0, 0]).all() and img[0, 0].tolist() == [51, 102, 153]
    assert json.loads(out)["mean_opacity"] == 0.0


def test_render_label_count_mismatch(capsys, tmp_path, data_dir):
    (tmp_path / "lab.txt").write_text("0\n1\n" * 10)
    code, _, err = _render(capsys, data_dir, tmp_path / "a.ppm", "hemispheres.json",
                           "--labels", tmp_path / "lab.txt")
    assert code == 2 and "20 labels" in err
    assert not (tmp_path / "a.ppm").exists()


def test_render_errors(capsys, tmp_path, data_dir):
    obj = data_dir / "icosphere1.obj"
    assert _render(capsys, data_dir, tmp_path / "a.ppm", "checker.json", "--samples", 1)[0] == 2
    assert _render(capsys, data_dir, tmp_path / "a.ppm", "checker.json", "--labels",
                   tmp_path / "none.txt")[0] == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert run(capsys, "render", obj, obj, data_dir / "camera.json", tmp_path / "bad.json",
               "--out", tmp_path / "a.ppm")[0] == 1
    (tmp_path / "cam.json").write_text(json.dumps({"fx": 1}))
    assert run(capsys, "render", obj, obj, tmp_path / "cam.json", data_dir / "checker.json",
               "--out", tmp_path / "a.ppm")[0] == 2
    # composite labels for icosphere3 do not fit icosphere1
    code, _, err = run(capsys, "render", obj, obj, data_dir / "camera.json",
                       data_dir / "hemispheres.json", "--out", tmp_path / "a.ppm")
    assert code == 2


def test_render_stats_to_file(capsys, tmp_path, data_dir):
    code, out, _ = _render(capsys, data_dir, tmp_path / "a.ppm", "sphere.json", "--samples", 16,
                           "--stats", tmp_path / "s.json", mesh="icosphere1.obj")
    st = json.loads((tmp_path / "s.json").read_text())
    assert code == 0 and out == "" and st["samples_per_ray"] == 16 and st["width"] == 40
